//! JSON run configurations, one per subcommand.

use std::path::PathBuf;

use ridgefe::bounds::BoundsConfig;
use ridgefe::decomposition::{GridSpec, PenaltyChoice};
use ridgefe::estimator::{DgpSpec, SolverOptions, TraceOptions};
use ridgefe::sbm::SbmParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    pub sbm: SbmParams,
    pub dgp: DgpSpec,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub sbm: SbmParams,
    pub dgp: DgpSpec,
    /// Number of independent test panels to emit.
    #[serde(default = "one")]
    pub test_draws: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn one() -> u64 {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Ols,
    OlsDebiased,
    Ridge,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    pub panel: PathBuf,
    pub estimator: EstimatorKind,
    /// Required for ridge.
    #[serde(default)]
    pub penalties: Option<PenaltyChoice>,
    /// Restrict to the largest connected component before fitting.
    #[serde(default)]
    pub largest_component: bool,
    #[serde(default)]
    pub solver: Option<SolverOptions>,
    #[serde(default)]
    pub trace: Option<TraceOptions>,
    #[serde(default)]
    pub threads: Option<usize>,
}

/// Either a simulated design or panels read from files.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Simulation(SimulationBlock),
    Files {
        panel: PathBuf,
        #[serde(default)]
        test_panels: Vec<PathBuf>,
        /// True effects in the fit format, for a "true" row.
        #[serde(default)]
        truth: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeConfig {
    pub data: DataSource,
    pub penalties: PenaltyChoice,
    #[serde(default = "yes")]
    pub include_ols: bool,
    #[serde(default)]
    pub trace: Option<TraceOptions>,
    /// Emit kernel densities and scatter files of the effects.
    #[serde(default = "yes")]
    pub densities: bool,
    #[serde(default)]
    pub threads: Option<usize>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GridChoice {
    Spec(GridSpec),
    /// Explicit absolute `(λ_w, λ_f)` pairs.
    Points(Vec<(f64, f64)>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CvConfig {
    pub data: DataSource,
    pub grid: GridChoice,
    /// Simulated test panels to average over (simulation data only).
    #[serde(default = "one")]
    pub test_draws: u64,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsRunConfig {
    pub bounds: BoundsConfig,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDesign {
    pub label: String,
    pub sbm: SbmParams,
    pub dgp: DgpSpec,
    pub penalties: PenaltyChoice,
}

/// Table 1 and Table 2 style summaries averaged over seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub designs: Vec<ReportDesign>,
    pub seeds: Vec<u64>,
    #[serde(default = "yes")]
    pub include_ols: bool,
    #[serde(default)]
    pub trace: Option<TraceOptions>,
    #[serde(default)]
    pub threads: Option<usize>,
}

pub trait Seeded {
    fn set_seed(&mut self, seed: u64);
    fn threads(&self) -> Option<usize>;
}

impl Seeded for SimulateConfig {
    fn set_seed(&mut self, seed: u64) {
        self.sbm.seed = seed;
    }
    fn threads(&self) -> Option<usize> {
        self.threads
    }
}

impl Seeded for EstimateConfig {
    fn set_seed(&mut self, seed: u64) {
        if let Some(t) = self.trace.as_mut() {
            t.seed = seed;
        } else {
            self.trace = Some(TraceOptions { seed, ..TraceOptions::default() });
        }
    }
    fn threads(&self) -> Option<usize> {
        self.threads
    }
}

impl Seeded for DataSource {
    fn set_seed(&mut self, seed: u64) {
        if let DataSource::Simulation(s) = self {
            s.sbm.seed = seed;
        }
    }
    fn threads(&self) -> Option<usize> {
        None
    }
}

impl Seeded for DecomposeConfig {
    fn set_seed(&mut self, seed: u64) {
        self.data.set_seed(seed);
    }
    fn threads(&self) -> Option<usize> {
        self.threads
    }
}

impl Seeded for CvConfig {
    fn set_seed(&mut self, seed: u64) {
        self.data.set_seed(seed);
    }
    fn threads(&self) -> Option<usize> {
        self.threads
    }
}

impl Seeded for BoundsRunConfig {
    fn set_seed(&mut self, seed: u64) {
        self.bounds.sbm.seed = seed;
    }
    fn threads(&self) -> Option<usize> {
        self.threads
    }
}

impl Seeded for ReportConfig {
    fn set_seed(&mut self, seed: u64) {
        self.seeds = vec![seed];
    }
    fn threads(&self) -> Option<usize> {
        self.threads
    }
}
