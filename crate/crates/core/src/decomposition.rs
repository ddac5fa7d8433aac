//! Variance decompositions of outcomes, out-of-sample error, cross-validation
//! of the ridge penalties, prediction SSE, and kernel densities for the
//! simulated designs.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    debiased_quadratics, effect_moments, generate_outcomes, ols_fit_pinned, population_variance, random_beta_bias,
    random_beta_variance, ridge_fit_with, DebiasedComponents, DgpSpec, FixedEffectDgp, OutcomePanel, RidgeFit,
    RidgeSystem, SolverOptions, TraceOptions,
};
use crate::graph::{BipartiteGraph, GraphSummary, NodeMapping, RidgePenalties};
use crate::rng::{derive_seed, tag};
use crate::sbm::{draw_assignment, sample_edges, ClippingSummary, ExpectedNetwork, NodeAssignment, SbmParams};

/// Shares of `Var(y)` and the correlation of the two effect blocks over
/// observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceDecomposition {
    pub share_worker: f64,
    pub share_firm: f64,
    pub share_2cov: f64,
    /// `1 −` the other three shares.
    pub share_residual: f64,
    /// Zero when either effect block has no variance; NaN when unavailable.
    pub fe_correlation: f64,
    pub total_variance: f64,
}

impl VarianceDecomposition {
    /// Shares from `(Var(Wμ), Var(Fφ), Cov(Wμ, Fφ))` and `Var(y)`.
    pub fn from_moments(moments: [f64; 3], var_y: f64, correlation: f64) -> Result<Self> {
        if !(var_y > 0.0) || !var_y.is_finite() {
            return Err(Error::Degenerate(format!("total variance {var_y} is not positive")));
        }
        let [vw, vf, c] = moments;
        let (sw, sf, sc) = (vw / var_y, vf / var_y, 2.0 * c / var_y);
        Ok(Self {
            share_worker: sw,
            share_firm: sf,
            share_2cov: sc,
            share_residual: 1.0 - sw - sf - sc,
            fe_correlation: correlation,
            total_variance: var_y,
        })
    }

    pub fn shares(&self) -> [f64; 4] {
        [self.share_worker, self.share_firm, self.share_2cov, self.share_residual]
    }
}

fn correlation(moments: [f64; 3]) -> f64 {
    let [vw, vf, c] = moments;
    if vw > 0.0 && vf > 0.0 {
        (c / (vw * vf).sqrt()).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Decomposition of `y` with effects `mu`, `phi` indexed like the panel's
/// graph.
pub fn decompose_effects(panel: &OutcomePanel, mu: &[f64], phi: &[f64]) -> Result<VarianceDecomposition> {
    if mu.len() != panel.graph.n_workers() || phi.len() != panel.graph.n_firms() {
        return Err(Error::InvalidInput("effects do not cover the panel's nodes".into()));
    }
    if panel.n_obs() == 0 {
        return Err(Error::Degenerate("empty panel".into()));
    }
    let m = effect_moments(panel, mu, phi);
    VarianceDecomposition::from_moments(m, population_variance(&panel.y), correlation(m))
}

pub fn decompose(panel: &OutcomePanel, fit: &RidgeFit) -> Result<VarianceDecomposition> {
    decompose_effects(panel, &fit.mu_hat, &fit.phi_hat)
}

/// Shares from the bias-corrected OLS components. The correlation is NaN
/// when a corrected variance is not positive.
pub fn debiased_decomposition(comp: &DebiasedComponents) -> Result<VarianceDecomposition> {
    let [vw, vf, c] = comp.corrected;
    let corr = if vw > 0.0 && vf > 0.0 { c / (vw * vf).sqrt() } else { f64::NAN };
    VarianceDecomposition::from_moments(comp.corrected, comp.var_y, corr)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OosReport {
    pub mse: f64,
    pub used: usize,
    pub dropped: usize,
    pub dropped_fraction: f64,
}

/// MSE of `y − μ̂_i − φ̂_j` over test rows whose worker and firm both appear
/// in the training panel. Nodes are matched through the panels' mappings,
/// which must refer to the same node labels.
pub fn out_of_sample_mse(train: &OutcomePanel, fit: &RidgeFit, test: &OutcomePanel) -> Result<OosReport> {
    if fit.mu_hat.len() != train.graph.n_workers() || fit.phi_hat.len() != train.graph.n_firms() {
        return Err(Error::InvalidInput("fit does not match the training panel".into()));
    }
    let wmap = label_lookup(&train.mapping.workers, &test.mapping.workers);
    let fmap = label_lookup(&train.mapping.firms, &test.mapping.firms);
    let (mut sse, mut used, mut dropped) = (0.0, 0usize, 0usize);
    for (i, j, y) in test.rows() {
        match (wmap[i], fmap[j]) {
            (Some(a), Some(b)) => {
                let r = y - fit.mu_hat[a] - fit.phi_hat[b];
                sse += r * r;
                used += 1;
            }
            _ => dropped += 1,
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("no test observation has both nodes in the training fit".into()));
    }
    Ok(OosReport { mse: sse / used as f64, used, dropped, dropped_fraction: dropped as f64 / (used + dropped) as f64 })
}

/// For each test node, its training index if the label is present.
fn label_lookup(train_labels: &[usize], test_labels: &[usize]) -> Vec<Option<usize>> {
    let max = train_labels.iter().chain(test_labels).copied().max().map_or(0, |m| m + 1);
    let mut inv = vec![None; max];
    for (new, &old) in train_labels.iter().enumerate() {
        inv[old] = Some(new);
    }
    test_labels.iter().map(|&l| inv[l]).collect()
}

/// A fresh network on the same nodes, types and `θ`, fresh residuals and the
/// same realized effects, restricted to its largest component. Node labels in
/// the mapping index the full assignment.
pub fn make_test_panel(
    assignment: &NodeAssignment,
    affinity: &DMatrix<f64>,
    dgp: &FixedEffectDgp,
    seed: u64,
    draw: u64,
) -> Result<OutcomePanel> {
    let key = derive_seed(tag::TEST_NETWORK, draw);
    let net = sample_edges(assignment, affinity, seed, key)?;
    let (sub, mapping) = retained_component(&net.graph)?;
    generate_outcomes(&sub, &mapping, dgp, seed, key)
}

/// Largest component, or an empty panel when the draw has no matches.
fn retained_component(g: &BipartiteGraph) -> Result<(BipartiteGraph, NodeMapping)> {
    if g.n_obs() == 0 {
        let empty = BipartiteGraph::from_edges(0, 0, &[])?;
        return Ok((empty, NodeMapping::new(vec![], vec![], g.n_workers(), g.n_firms())));
    }
    g.largest_component()
}

/// Table-1 style description of a simulated network.
#[derive(Debug, Clone, Serialize)]
pub struct NetworkSummary {
    pub initial_workers: usize,
    pub initial_firms: usize,
    /// Components with at least one match in the full draw.
    pub n_components: usize,
    pub n: usize,
    pub p: usize,
    pub n_obs: u64,
    pub sparsity: f64,
    pub avg_worker_degree: f64,
    pub avg_firm_degree: f64,
    pub clipping: ClippingSummary,
}

/// One simulated training dataset: assignment, realized effects, the full
/// network, and the outcome panel on its largest component.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub params: SbmParams,
    pub assignment: NodeAssignment,
    pub affinity: DMatrix<f64>,
    pub dgp: FixedEffectDgp,
    pub full_graph: BipartiteGraph,
    pub clipping: ClippingSummary,
    pub panel: OutcomePanel,
}

pub fn simulate(params: &SbmParams, spec: &DgpSpec) -> Result<Simulation> {
    params.validate()?;
    let assignment = draw_assignment(params)?;
    let affinity = params.affinity_matrix();
    let net = sample_edges(&assignment, &affinity, params.seed, 0)?;
    let dgp = FixedEffectDgp::draw(&assignment, spec, params.seed)?;
    let (sub, mapping) = retained_component(&net.graph)?;
    let panel = generate_outcomes(&sub, &mapping, &dgp, params.seed, 0)?;
    Ok(Simulation {
        params: params.clone(),
        assignment,
        affinity,
        dgp,
        full_graph: net.graph,
        clipping: net.clipping,
        panel,
    })
}

impl Simulation {
    pub fn summary(&self) -> NetworkSummary {
        let full: GraphSummary = self.full_graph.summary();
        let lcc = self.panel.graph.summary();
        NetworkSummary {
            initial_workers: self.params.n0,
            initial_firms: self.params.p0,
            n_components: full.n_components,
            n: lcc.n,
            p: lcc.p,
            n_obs: lcc.n_obs,
            sparsity: lcc.sparsity,
            avg_worker_degree: lcc.avg_worker_degree,
            avg_firm_degree: lcc.avg_firm_degree,
            clipping: self.clipping,
        }
    }

    /// Realized effects restricted to the training panel's nodes.
    pub fn true_effects(&self) -> (Vec<f64>, Vec<f64>) {
        let m = &self.panel.mapping;
        (
            m.workers.iter().map(|&i| self.dgp.mu[i]).collect(),
            m.firms.iter().map(|&j| self.dgp.phi[j]).collect(),
        )
    }

    pub fn test_panel(&self, draw: u64) -> Result<OutcomePanel> {
        make_test_panel(&self.assignment, &self.affinity, &self.dgp, self.params.seed, draw)
    }

    /// `(N/n, N/p)` on the training panel.
    pub fn degree_scale(&self) -> (f64, f64) {
        degree_scale(&self.panel)
    }
}

/// `(N/n, N/p)`.
pub fn degree_scale(panel: &OutcomePanel) -> (f64, f64) {
    let nn = panel.n_obs() as f64;
    (nn / panel.graph.n_workers() as f64, nn / panel.graph.n_firms() as f64)
}

/// Absolute penalties from degree-normalized ones.
pub fn denormalize(panel: &OutcomePanel, lw_norm: f64, lf_norm: f64) -> Result<RidgePenalties> {
    let (sw, sf) = degree_scale(panel);
    RidgePenalties::new(lw_norm * sw, lf_norm * sf)
}

/// Log-spaced penalty grid, in units of the average degree when
/// `normalized`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lw_min: f64,
    pub lw_max: f64,
    pub lf_min: f64,
    pub lf_max: f64,
    pub points_w: usize,
    pub points_f: usize,
    #[serde(default = "yes")]
    pub normalized: bool,
}

fn yes() -> bool {
    true
}

impl GridSpec {
    pub fn default_normalized() -> Self {
        Self { lw_min: 0.05, lw_max: 5.0, lf_min: 0.05, lf_max: 5.0, points_w: 12, points_f: 12, normalized: true }
    }

    /// Grid pairs, worker penalty varying slowest.
    pub fn penalties(&self, panel: &OutcomePanel) -> Result<Vec<RidgePenalties>> {
        let ok = |a: f64, b: f64| a > 0.0 && b >= a && a.is_finite() && b.is_finite();
        if !ok(self.lw_min, self.lw_max) || !ok(self.lf_min, self.lf_max) || self.points_w == 0 || self.points_f == 0 {
            return Err(Error::InvalidInput("grid bounds must satisfy 0 < min <= max with >= 1 point".into()));
        }
        let (sw, sf) = if self.normalized { degree_scale(panel) } else { (1.0, 1.0) };
        let lw = log_space(self.lw_min, self.lw_max, self.points_w);
        let lf = log_space(self.lf_min, self.lf_max, self.points_f);
        let mut out = Vec::with_capacity(lw.len() * lf.len());
        for &a in &lw {
            for &b in &lf {
                out.push(RidgePenalties::new(a * sw, b * sf)?);
            }
        }
        Ok(out)
    }
}

pub fn log_space(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..k).map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp()).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct CvResult {
    pub grid: Vec<RidgePenalties>,
    /// `None` where the fit failed.
    pub mse: Vec<Option<f64>>,
    pub best: RidgePenalties,
    pub best_mse: f64,
    /// `(λ_w/(N/n), λ_f/(N/p))` of the best pair.
    pub normalized: (f64, f64),
    pub dropped_fraction: f64,
}

/// Grid search for the penalties minimizing out-of-sample MSE. Ties go to the
/// larger `λ_w + λ_f`, then the larger `λ_w`.
pub fn cross_validate(train: &OutcomePanel, test: &OutcomePanel, grid: &[RidgePenalties]) -> Result<CvResult> {
    cross_validate_averaged(train, std::slice::from_ref(test), grid, SolverOptions::default())
}

/// As [`cross_validate`], averaging the MSE over several test panels.
pub fn cross_validate_averaged(
    train: &OutcomePanel,
    tests: &[OutcomePanel],
    grid: &[RidgePenalties],
    opts: SolverOptions,
) -> Result<CvResult> {
    if grid.is_empty() || tests.is_empty() {
        return Err(Error::InvalidInput("cross-validation needs a grid and a test panel".into()));
    }
    if grid.iter().any(|g| !g.is_positive()) {
        return Err(Error::ZeroPenalty);
    }
    let evals: Vec<Option<(f64, f64)>> = grid
        .par_iter()
        .map(|&lam| {
            let fit = ridge_fit_with(train, lam, opts).ok()?;
            let (mut m, mut d) = (0.0, 0.0);
            for t in tests {
                let r = out_of_sample_mse(train, &fit, t).ok()?;
                m += r.mse;
                d += r.dropped_fraction;
            }
            let k = tests.len() as f64;
            Some((m / k, d / k)).filter(|(m, _)| m.is_finite())
        })
        .collect();
    let mut best: Option<usize> = None;
    for (idx, e) in evals.iter().enumerate() {
        let Some((m, _)) = e else { continue };
        best = match best {
            None => Some(idx),
            Some(b) => {
                let bm = evals[b].unwrap().0;
                let (lb, li) = (grid[b], grid[idx]);
                let better = *m < bm
                    || (*m == bm
                        && (li.lambda_w + li.lambda_f, li.lambda_w) > (lb.lambda_w + lb.lambda_f, lb.lambda_w));
                Some(if better { idx } else { b })
            }
        };
    }
    let b = best.ok_or_else(|| Error::Degenerate("every grid point failed".into()))?;
    let (sw, sf) = degree_scale(train);
    let (best_mse, dropped_fraction) = evals[b].unwrap();
    Ok(CvResult {
        grid: grid.to_vec(),
        mse: evals.iter().map(|e| e.map(|(m, _)| m)).collect(),
        best: grid[b],
        best_mse,
        normalized: (grid[b].lambda_w / sw, grid[b].lambda_f / sf),
        dropped_fraction,
    })
}

/// Terms of the prediction SSE on the expected network given the realized
/// training network.
#[derive(Debug, Clone, Serialize)]
pub struct SseReport {
    /// `b_μᵀ 𝔇_w b_μ`.
    pub bias_worker: f64,
    /// `tr(𝔇_w V_w)`.
    pub trace_worker: f64,
    /// `2 b_μᵀ 𝔅 b_φ`.
    pub bias_cross: f64,
    /// `2 tr(𝔅ᵀ C_λ)`, Monte Carlo.
    pub trace_cross: f64,
    /// `b_φᵀ 𝔇_f b_φ`.
    pub bias_firm: f64,
    /// `tr(𝔇_f V_f)`.
    pub trace_firm: f64,
    /// `σ² Σ_ij 𝔅_ij`, the expected residual sum of squares of the test rows.
    pub noise: f64,
    pub total: f64,
    /// Direct Monte Carlo SSE and its standard error.
    pub monte_carlo: f64,
    pub monte_carlo_se: f64,
    pub replications: usize,
}

/// Prediction SSE for ridge with penalties `en.penalties`, trained on `graph`
/// (nodes indexed like `en.assignment`). Effects and residuals are redrawn
/// in each of the `replications` Monte Carlo draws.
pub fn prediction_sse(
    graph: &BipartiteGraph,
    en: &ExpectedNetwork,
    spec: &DgpSpec,
    replications: usize,
    seed: u64,
    dense_cap: usize,
) -> Result<SseReport> {
    let a = &en.assignment;
    if graph.n_workers() != a.n_workers() || graph.n_firms() != a.n_firms() {
        return Err(Error::InvalidInput("graph and expected network have different nodes".into()));
    }
    let size = graph.n_workers().max(graph.n_firms());
    if size > dense_cap {
        return Err(Error::DenseCapExceeded { size, cap: dense_cap });
    }
    if replications < 2 {
        return Err(Error::InvalidInput("prediction SSE needs at least 2 replications".into()));
    }
    spec.validate(a.k)?;
    let lam = en.penalties;
    let dw = en.expected_worker_degrees();
    let df = en.expected_firm_degrees();
    let b = random_beta_bias(graph, lam, &a.worker_types, &a.firm_types, &spec.mu_star, &spec.phi_star)?;
    let v = random_beta_variance(graph, lam, spec.sigma, spec.sigma_w, spec.sigma_f, dense_cap)?;
    let quad = |d: &[f64], x: &[f64]| d.iter().zip(x).map(|(d, x)| d * x * x).sum::<f64>();
    let bilinear = |x: &[f64], y: &[f64]| -> f64 { x.iter().zip(en.mul_b(y)).map(|(a, b)| a * b).sum() };
    let bias_worker = quad(dw, &b.mu);
    let bias_firm = quad(df, &b.phi);
    let bias_cross = 2.0 * bilinear(&b.mu, &b.phi);
    let trace_worker: f64 = dw.iter().zip(&v.var_mu_diag).map(|(d, v)| d * v).sum();
    let trace_firm: f64 = df.iter().zip(&v.var_phi_diag).map(|(d, v)| d * v).sum();
    let noise = spec.sigma * spec.sigma * dw.iter().sum::<f64>();

    let sys = RidgeSystem::new(graph, lam, None, SolverOptions { tol: 1e-12, ..SolverOptions::default() })?;
    let ident = NodeMapping::identity(graph.n_workers(), graph.n_firms());
    let draws: Vec<(f64, f64)> = (0..replications)
        .into_par_iter()
        .map(|r| -> Result<(f64, f64)> {
            let key = derive_seed(seed, r as u64);
            let dgp = FixedEffectDgp::draw(a, spec, key)?;
            let panel = generate_outcomes(graph, &ident, &dgp, key, 0)?;
            let (rw, rf) = panel.sums();
            let (mu_hat, phi_hat, _, _) = sys.solve_normal(&rw, &rf)?;
            let e_mu: Vec<f64> = mu_hat.iter().zip(&dgp.mu).map(|(h, t)| h - t).collect();
            let e_phi: Vec<f64> = phi_hat.iter().zip(&dgp.phi).map(|(h, t)| h - t).collect();
            let full = quad(dw, &e_mu) + 2.0 * bilinear(&e_mu, &e_phi) + quad(df, &e_phi);
            let c_mu: Vec<f64> = e_mu.iter().zip(&b.mu).map(|(e, b)| e - b).collect();
            let c_phi: Vec<f64> = e_phi.iter().zip(&b.phi).map(|(e, b)| e - b).collect();
            Ok((full, bilinear(&c_mu, &c_phi)))
        })
        .collect::<Result<_>>()?;
    let r = replications as f64;
    let trace_cross = 2.0 * draws.iter().map(|d| d.1).sum::<f64>() / r;
    let mean = draws.iter().map(|d| d.0).sum::<f64>() / r;
    let var = draws.iter().map(|d| (d.0 - mean).powi(2)).sum::<f64>() / (r - 1.0);
    let total = bias_worker + trace_worker + bias_cross + trace_cross + bias_firm + trace_firm + noise;
    Ok(SseReport {
        bias_worker,
        trace_worker,
        bias_cross,
        trace_cross,
        bias_firm,
        trace_firm,
        noise,
        total,
        monte_carlo: mean + noise,
        monte_carlo_se: (var / r).sqrt(),
        replications,
    })
}

pub const DENSITY_GRID: usize = 512;

/// Gaussian kernel density on an evenly spaced grid spanning the data plus
/// three bandwidths on each side.
#[derive(Debug, Clone, Serialize)]
pub struct DensityReport {
    pub bandwidth: f64,
    /// Set when all values coincide; the grid is then empty.
    pub point_mass: Option<f64>,
    pub x: Vec<f64>,
    pub density: Vec<f64>,
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^{-1/5}`, falling back to the sd
/// when the IQR vanishes.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let sd = (population_variance(values) * n / (n - 1.0)).sqrt();
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let iqr = quantile(&s, 0.75) - quantile(&s, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * n.powf(-0.2)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn density_report(values: &[f64], grid_points: usize) -> Result<DensityReport> {
    if values.len() < 2 {
        return Err(Error::InvalidInput("density needs at least 2 values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("density input must be finite".into()));
    }
    if grid_points < 2 {
        return Err(Error::InvalidInput("density grid needs at least 2 points".into()));
    }
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if lo == hi {
        return Ok(DensityReport { bandwidth: 0.0, point_mass: Some(lo), x: vec![], density: vec![] });
    }
    let h = silverman_bandwidth(values);
    let (a, b) = (lo - 3.0 * h, hi + 3.0 * h);
    let x: Vec<f64> = (0..grid_points).map(|k| a + (b - a) * k as f64 / (grid_points - 1) as f64).collect();
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let density = x
        .par_iter()
        .map(|&t| values.iter().map(|&v| (-0.5 * ((t - v) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect();
    Ok(DensityReport { bandwidth: h, point_mass: None, x, density })
}

/// One row of the simulated regression table.
#[derive(Debug, Clone, Serialize)]
pub struct DecompositionRow {
    pub estimator: String,
    pub decomposition: VarianceDecomposition,
    pub oos_mse: Option<f64>,
    pub lw_norm: Option<f64>,
    pub lf_norm: Option<f64>,
}

/// How the ridge penalties of a table run are chosen.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PenaltyChoice {
    /// Multiples of the average worker and firm degrees.
    Normalized { lw: f64, lf: f64 },
    Absolute { lambda_w: f64, lambda_f: f64 },
    CrossValidated { grid: GridSpec },
}

#[derive(Debug, Clone, Serialize)]
pub struct TableRun {
    pub rows: Vec<DecompositionRow>,
    pub ridge_fit: RidgeFit,
    pub ols_fit: Option<RidgeFit>,
    pub debiased: Option<DebiasedComponents>,
    pub cv: Option<CvResult>,
    /// Mean fraction of test rows dropped for unseen nodes.
    pub test_dropped_fraction: f64,
}

/// True, OLS, debiased OLS and ridge decompositions of a simulation, with
/// out-of-sample MSE on one fresh test panel.
pub fn table_rows(sim: &Simulation, choice: &PenaltyChoice, include_ols: bool, trace: TraceOptions) -> Result<TableRun> {
    let test = sim.test_panel(0)?;
    let truth = sim.true_effects();
    table_rows_from(&sim.panel, std::slice::from_ref(&test), Some(&truth), choice, include_ols, trace)
}

/// Table rows for a training panel, test panels sharing its node labels,
/// and optional true effects indexed like the panel. The MSE is averaged
/// over the test panels; without test panels it is omitted.
pub fn table_rows_from(
    panel: &OutcomePanel,
    tests: &[OutcomePanel],
    truth: Option<&(Vec<f64>, Vec<f64>)>,
    choice: &PenaltyChoice,
    include_ols: bool,
    trace: TraceOptions,
) -> Result<TableRun> {
    let opts = SolverOptions::default();
    let oos = |fit: &RidgeFit| -> Result<Option<(f64, f64)>> {
        if tests.is_empty() {
            return Ok(None);
        }
        let (mut m, mut d) = (0.0, 0.0);
        for t in tests {
            let r = out_of_sample_mse(panel, fit, t)?;
            m += r.mse;
            d += r.dropped_fraction;
        }
        Ok(Some((m / tests.len() as f64, d / tests.len() as f64)))
    };
    let mut rows = Vec::new();
    if let Some((mu, phi)) = truth {
        rows.push(DecompositionRow {
            estimator: "true".into(),
            decomposition: decompose_effects(panel, mu, phi)?,
            oos_mse: None,
            lw_norm: None,
            lf_norm: None,
        });
    }
    let (mut ols, mut debiased) = (None, None);
    if include_ols {
        let fit = ols_fit_pinned(panel, 0, opts)?;
        rows.push(DecompositionRow {
            estimator: "ols".into(),
            decomposition: decompose(panel, &fit)?,
            oos_mse: oos(&fit)?.map(|o| o.0),
            lw_norm: None,
            lf_norm: None,
        });
        let comp = debiased_quadratics(panel, &fit, trace)?;
        rows.push(DecompositionRow {
            estimator: "ols_debiased".into(),
            decomposition: debiased_decomposition(&comp)?,
            oos_mse: None,
            lw_norm: None,
            lf_norm: None,
        });
        ols = Some(fit);
        debiased = Some(comp);
    }
    let (lam, cv) = match choice {
        PenaltyChoice::Normalized { lw, lf } => (denormalize(panel, *lw, *lf)?, None),
        PenaltyChoice::Absolute { lambda_w, lambda_f } => (RidgePenalties::new(*lambda_w, *lambda_f)?, None),
        PenaltyChoice::CrossValidated { grid } => {
            if tests.is_empty() {
                return Err(Error::InvalidInput("cross-validated penalties need a test panel".into()));
            }
            let cv = cross_validate_averaged(panel, tests, &grid.penalties(panel)?, opts)?;
            (cv.best, Some(cv))
        }
    };
    let fit = ridge_fit_with(panel, lam, opts)?;
    let ridge_oos = oos(&fit)?;
    let (sw, sf) = degree_scale(panel);
    rows.push(DecompositionRow {
        estimator: "ridge".into(),
        decomposition: decompose(panel, &fit)?,
        oos_mse: ridge_oos.map(|o| o.0),
        lw_norm: Some(lam.lambda_w / sw),
        lf_norm: Some(lam.lambda_f / sf),
    });
    Ok(TableRun {
        rows,
        ridge_fit: fit,
        ols_fit: ols,
        debiased,
        cv,
        test_dropped_fraction: ridge_oos.map_or(f64::NAN, |o| o.1),
    })
}
