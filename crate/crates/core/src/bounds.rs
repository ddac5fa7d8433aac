//! Concentration bounds for the regularized Laplacians, their inverses, and
//! the ridge bias and variance, with Monte Carlo checks over network draws.

use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    deterministic_bias, deterministic_variance_operators, random_beta_bias, random_beta_variance, DgpSpec, RidgeSystem,
    SolverOptions,
};
use crate::graph::{normalized_adjacency, BipartiteGraph, Laplacian, RidgePenalties, Side};
use crate::linalg::{operator_norm, symmetric_spectral_norm, Difference, LinearOperator, PowerOptions};
use crate::rng::{derive_seed, tag};
use crate::sbm::{draw_assignment, sample_edges, ExpectedNetwork, NodeAssignment, SbmParams};

/// Scalars shared by all bound expressions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundInputs {
    pub n: usize,
    pub p: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub lambda_w: f64,
    pub lambda_f: f64,
    pub delta_w_min: f64,
    pub delta_w_max: f64,
    pub delta_f_min: f64,
    pub delta_f_max: f64,
    pub m_w: f64,
    pub m_f: f64,
    pub m: f64,
    pub t: f64,
    pub chi_w: f64,
    pub chi_f: f64,
    /// `M ≤ 1/(3 ln((n+p)/ε))`, up to a relative 1e-12.
    pub applicable: bool,
}

impl BoundInputs {
    #[allow(clippy::too_many_arguments)]
    pub fn from_scalars(
        n: usize,
        p: usize,
        penalties: RidgePenalties,
        epsilon: f64,
        delta_w: (f64, f64),
        delta_f: (f64, f64),
    ) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::InvalidInput(format!("epsilon must lie in (0, 1), got {epsilon}")));
        }
        if n == 0 || p == 0 {
            return Err(Error::InvalidInput("bounds need n, p >= 1".into()));
        }
        let RidgePenalties { lambda_w, lambda_f } = penalties;
        let (dwl, dwu) = delta_w;
        let (dfl, dfu) = delta_f;
        let m_w = 1.0 / (dwl + lambda_w);
        let m_f = 1.0 / (dfl + lambda_f);
        let m = m_w.max(m_f);
        let log_term = ((n + p) as f64 / epsilon).ln();
        let t = (3.0 * m * log_term).sqrt();
        Ok(Self {
            n,
            p,
            epsilon,
            gamma: p as f64 / n as f64,
            lambda_w,
            lambda_f,
            delta_w_min: dwl,
            delta_w_max: dwu,
            delta_f_min: dfl,
            delta_f_max: dfu,
            m_w,
            m_f,
            m,
            t,
            chi_w: 1f64.max(dfu / (dwl + lambda_w)),
            chi_f: 1f64.max(dwu / (dfl + lambda_f)),
            // t² ≤ 1 with slack so the boundary penalty 3(1+ν)ln(n+p) is not lost to rounding
            applicable: 3.0 * m * log_term <= 1.0 + 1e-12,
        })
    }

    fn ratio_w(&self) -> f64 {
        (self.delta_w_max + self.lambda_w) / (self.delta_w_min + self.lambda_w)
    }
    fn ratio_f(&self) -> f64 {
        (self.delta_f_max + self.lambda_f) / (self.delta_f_min + self.lambda_f)
    }

    /// `‖E_λ − 𝔈_λ‖ ≤ 4t`.
    pub fn thm1_adjacency(&self) -> f64 {
        4.0 * self.t
    }

    /// `‖L_{·,λ} − 𝔏_{·,λ}‖ ≤ 8t` (both sides).
    pub fn thm1_laplacian(&self) -> f64 {
        8.0 * self.t
    }

    /// `‖L^{-1} − 𝔏^{-1}‖ ≤ 16t((δ̄ + λ)/λ)²`.
    pub fn thm2(&self, side: Side) -> f64 {
        let (dmax, lam) = self.side_max(side);
        16.0 * self.t * ((dmax + lam) / lam).powi(2)
    }

    /// `‖L̃^{-1} − 𝔏̃^{-1}‖ ≤ (5 + 16(δ̄+λ)/(δ̲+λ)) (δ̄+λ)/λ² t`.
    pub fn thm3(&self, side: Side) -> f64 {
        let (dmax, lam) = self.side_max(side);
        let ratio = match side {
            Side::Worker => self.ratio_w(),
            Side::Firm => self.ratio_f(),
        };
        (5.0 + 16.0 * ratio) * (dmax + lam) / (lam * lam) * self.t
    }

    fn side_max(&self, side: Side) -> (f64, f64) {
        match side {
            Side::Worker => (self.delta_w_max, self.lambda_w),
            Side::Firm => (self.delta_f_max, self.lambda_f),
        }
    }

    /// Bias bound; `mu_norm`, `phi_norm` are Euclidean norms of the K-vectors
    /// `μ*`, `φ*`.
    pub fn thm4(&self, side: Side, mu_norm: f64, phi_norm: f64) -> f64 {
        let (n, p) = (self.n as f64, self.p as f64);
        let (lw, lf, t) = (self.lambda_w, self.lambda_f, self.t);
        let (dwu, dfu) = (self.delta_w_max + lw, self.delta_f_max + lf);
        let (dwl, dfl) = (self.delta_w_min + lw, self.delta_f_min + lf);
        match side {
            Side::Worker => {
                (5.0 + 16.0 * self.ratio_w()) * dwu / (lw * lw) * t
                    * (lw * n.sqrt() * mu_norm + lf * (dwu / dfl).sqrt() * p.sqrt() * phi_norm)
                    + 2.0 * lf * dwu / (lw * lw) * (self.chi_f.sqrt() + 2.0 * (dwu / lf).sqrt()) * t * p.sqrt() * phi_norm
            }
            Side::Firm => {
                (5.0 + 16.0 * self.ratio_f()) * dfu / (lf * lf) * t
                    * (lf * p.sqrt() * phi_norm + lw * (dfu / dwl).sqrt() * n.sqrt() * mu_norm)
                    + 2.0 * lw * dfu / (lf * lf) * (self.chi_w.sqrt() + 2.0 * (dfu / lw).sqrt()) * t * n.sqrt() * mu_norm
            }
        }
    }

    /// Variance bound. Both sides use `χ_w` and `(δ̄_f+λ_f)/λ_w` in the last
    /// bracket, as the statement is printed.
    pub fn thm5(&self, side: Side, sigma: f64, sigma_w: f64, sigma_f: f64) -> f64 {
        let (lw, lf, t) = (self.lambda_w, self.lambda_f, self.t);
        let s2 = sigma * sigma;
        let aw = (lw * lw * sigma_w * sigma_w - lw * s2).abs();
        let af = (lf * lf * sigma_f * sigma_f - lf * s2).abs();
        let (dwu, dfu) = (self.delta_w_max + lw, self.delta_f_max + lf);
        let (dwl, dfl) = (self.delta_w_min + lw, self.delta_f_min + lf);
        let tail = 2.0 * (self.chi_w.sqrt() + 2.0 * (dfu / lw).sqrt());
        match side {
            Side::Worker => {
                let c = 5.0 + 16.0 * self.ratio_w();
                s2 * c * dwu / (lw * lw) * t
                    + aw * (2.0 / lw + 1.0 / dwl) * c * dwu * dwu / lw.powi(3) * t
                    + af * (4.0 / lw * (1.0 / lf).sqrt() + 1.0 / dwl * (1.0 / dfl).sqrt()) * dwu.powf(2.5) / lw.powi(3)
                        * (c * (dwu / dfl).sqrt() + tail)
                        * t
            }
            Side::Firm => {
                let c = 5.0 + 16.0 * self.ratio_f();
                s2 * c * dfu / (lf * lf) * t
                    + af * (2.0 / lf + 1.0 / dfl) * c * dfu * dfu / lf.powi(3) * t
                    + aw * (4.0 / lf * (1.0 / lw).sqrt() + 1.0 / dfl * (1.0 / dwl).sqrt()) * dfu.powf(2.5) / lf.powi(3)
                        * (c * (dfu / dwl).sqrt() + tail)
                        * t
            }
        }
    }

    /// `1 − coefficient·ε` for the probability statement of `kind`.
    pub fn probability_floor(&self, kind: BoundKind) -> f64 {
        let g = self.gamma;
        let coef = match kind {
            BoundKind::Adjacency | BoundKind::Laplacian(_) => (3.0 + 4.0 * g) / (1.0 + g),
            BoundKind::LaplacianInverse(Side::Firm) => (3.0 + 5.0 * g) / (1.0 + g),
            BoundKind::LaplacianInverse(Side::Worker) => 4.0,
            BoundKind::UnnormalizedInverse(Side::Firm) => (3.0 + 9.0 * g) / (1.0 + g),
            BoundKind::UnnormalizedInverse(Side::Worker) => (8.0 + 4.0 * g) / (1.0 + g),
            BoundKind::Bias(Side::Worker) => (11.0 + 7.0 * g) / (1.0 + g),
            BoundKind::Bias(Side::Firm) => (6.0 + 12.0 * g) / (1.0 + g),
            BoundKind::Variance(Side::Worker) => (13.0 + 6.0 * g) / (1.0 + g),
            BoundKind::Variance(Side::Firm) => (5.0 + 13.0 * g) / (1.0 + g),
        };
        1.0 - coef * self.epsilon
    }
}

/// Inputs for an expected network.
pub fn bound_t(en: &ExpectedNetwork, epsilon: f64) -> Result<BoundInputs> {
    BoundInputs::from_scalars(
        en.n_workers(),
        en.n_firms(),
        en.penalties,
        epsilon,
        en.worker_degree_range(),
        en.firm_degree_range(),
    )
}

/// Penalty `3(1+ν) ln(n+p)` on both sides.
pub fn remark_penalty(n: usize, p: usize, nu: f64) -> Result<RidgePenalties> {
    RidgePenalties::uniform(3.0 * (1.0 + nu) * ((n + p) as f64).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Adjacency,
    Laplacian(Side),
    LaplacianInverse(Side),
    UnnormalizedInverse(Side),
    Bias(Side),
    Variance(Side),
}

impl BoundKind {
    pub fn theorem(&self) -> u8 {
        match self {
            BoundKind::Adjacency | BoundKind::Laplacian(_) => 1,
            BoundKind::LaplacianInverse(_) => 2,
            BoundKind::UnnormalizedInverse(_) => 3,
            BoundKind::Bias(_) => 4,
            BoundKind::Variance(_) => 5,
        }
    }

    pub fn label(&self) -> String {
        let side = |s: &Side| match s {
            Side::Worker => "worker",
            Side::Firm => "firm",
        };
        match self {
            BoundKind::Adjacency => "adjacency".into(),
            BoundKind::Laplacian(s) => format!("laplacian_{}", side(s)),
            BoundKind::LaplacianInverse(s) => format!("laplacian_inverse_{}", side(s)),
            BoundKind::UnnormalizedInverse(s) => format!("unnormalized_inverse_{}", side(s)),
            BoundKind::Bias(s) => format!("bias_{}", side(s)),
            BoundKind::Variance(s) => format!("variance_{}", side(s)),
        }
    }

    pub fn for_theorem(theorem: u8) -> Vec<BoundKind> {
        use Side::*;
        match theorem {
            1 => vec![BoundKind::Adjacency, BoundKind::Laplacian(Worker), BoundKind::Laplacian(Firm)],
            2 => vec![BoundKind::LaplacianInverse(Worker), BoundKind::LaplacianInverse(Firm)],
            3 => vec![BoundKind::UnnormalizedInverse(Worker), BoundKind::UnnormalizedInverse(Firm)],
            4 => vec![BoundKind::Bias(Worker), BoundKind::Bias(Firm)],
            5 => vec![BoundKind::Variance(Worker), BoundKind::Variance(Firm)],
            _ => vec![],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundEntry {
    pub theorem: u8,
    pub kind: BoundKind,
    pub name: String,
    pub theoretical_bound: f64,
    pub probability_floor: f64,
    /// One value per successful replication, in replication order.
    pub empirical_deviations: Vec<f64>,
    /// Replication index of each deviation.
    pub replication_index: Vec<usize>,
    pub failed_replications: usize,
    pub violation_rate: f64,
    pub applicable: bool,
}

impl BoundEntry {
    /// `1 − floor` capped to [0, 1] plus three binomial standard errors.
    pub fn allowed_violation_rate(&self) -> f64 {
        let p0 = (1.0 - self.probability_floor).clamp(0.0, 1.0);
        let r = self.empirical_deviations.len().max(1) as f64;
        p0 + 3.0 * (p0 * (1.0 - p0) / r).sqrt()
    }

    pub fn passes(&self) -> bool {
        self.violation_rate <= self.allowed_violation_rate()
    }

    pub fn median_deviation(&self) -> f64 {
        median(&self.empirical_deviations)
    }
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub replications: usize,
    pub entries: Vec<BoundEntry>,
    /// Replications where `‖L − 𝔏‖ > 2‖E_λ − 𝔈_λ‖` beyond round-off.
    pub identity_violations: usize,
}

impl BoundReport {
    pub fn entry(&self, kind: BoundKind) -> Option<&BoundEntry> {
        self.entries.iter().find(|e| e.kind == kind)
    }
}

/// Settings of a bound experiment. The assignment is drawn once from
/// `sbm.seed`; each replication redraws the edges only.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub sbm: SbmParams,
    /// Defaults to `3(1+ν) ln(n0+p0)` on both sides.
    #[serde(default)]
    pub penalties: Option<RidgePenalties>,
    #[serde(default = "default_nu")]
    pub nu: f64,
    pub epsilon: f64,
    pub replications: usize,
    #[serde(default = "default_theorems")]
    pub theorems: Vec<u8>,
    /// Outcome model for the bias and variance bounds.
    #[serde(default)]
    pub dgp: Option<DgpSpec>,
}

fn default_nu() -> f64 {
    0.5
}
fn default_theorems() -> Vec<u8> {
    vec![1, 2, 3]
}

impl BoundsConfig {
    pub fn desk(replications: usize) -> Self {
        Self {
            sbm: SbmParams::desk(600, 200, 7),
            penalties: None,
            nu: 0.5,
            epsilon: 0.1,
            replications,
            theorems: vec![1, 2, 3],
            dgp: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sbm.validate()?;
        if self.theorems.iter().any(|t| !(1..=5).contains(t)) {
            return Err(Error::InvalidInput("theorems must be in 1..=5".into()));
        }
        if self.theorems.iter().any(|t| *t >= 4) {
            let dgp = self
                .dgp
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("bias and variance bounds need a dgp block".into()))?;
            dgp.validate(self.sbm.k)?;
        }
        Ok(())
    }

    pub fn resolved_penalties(&self) -> Result<RidgePenalties> {
        match self.penalties {
            Some(p) => Ok(p),
            None => remark_penalty(self.sbm.n0, self.sbm.p0, self.nu),
        }
    }
}

/// A fixed assignment and expected network whose edges are redrawn per
/// replication.
pub struct BoundExperiment {
    pub assignment: NodeAssignment,
    pub affinity: DMatrix<f64>,
    pub expected: ExpectedNetwork,
    pub inputs: BoundInputs,
    pub dgp: Option<DgpSpec>,
    seed: u64,
    dense_cap: usize,
    power: PowerOptions,
}

/// Deviations measured on one network draw.
#[derive(Debug, Clone, Default)]
pub struct ReplicationDeviations {
    pub values: Vec<(BoundKind, f64)>,
    pub failed: Vec<BoundKind>,
    pub identity_ok: bool,
}

/// `x ↦ D^{1/2} S D^{1/2} x` or `x ↦ S x` for a solve `S` on one side of a
/// ridge system. Solve failures are recorded and yield zeros.
struct InverseOp<'a, 'g> {
    sys: &'a RidgeSystem<'g>,
    side: Side,
    normalized: bool,
    failed: &'a AtomicBool,
}

impl LinearOperator for InverseOp<'_, '_> {
    fn nrows(&self) -> usize {
        let (dw, df) = self.sys.degrees();
        match self.side {
            Side::Worker => dw.len(),
            Side::Firm => df.len(),
        }
    }
    fn ncols(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let (dw, df) = self.sys.degrees();
        let d = match self.side {
            Side::Worker => dw,
            Side::Firm => df,
        };
        let xs: Vec<f64> = if self.normalized { x.iter().zip(d).map(|(a, b)| a * b.sqrt()).collect() } else { x.to_vec() };
        let out = match self.side {
            Side::Worker => self.sys.solve_worker(&xs),
            Side::Firm => self.sys.solve_firm(&xs),
        };
        match out {
            Ok(v) => {
                for k in 0..y.len() {
                    y[k] = if self.normalized { v[k] * d[k].sqrt() } else { v[k] };
                }
            }
            Err(_) => {
                self.failed.store(true, Ordering::Relaxed);
                y.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        self.apply(x, y)
    }
}

impl BoundExperiment {
    pub fn new(params: &SbmParams, penalties: RidgePenalties, epsilon: f64, dgp: Option<DgpSpec>) -> Result<Self> {
        if !penalties.is_positive() {
            return Err(Error::ZeroPenalty);
        }
        let assignment = draw_assignment(params)?;
        let affinity = params.affinity_matrix();
        let expected = ExpectedNetwork::new(&assignment, &affinity, penalties)?;
        let inputs = bound_t(&expected, epsilon)?;
        Ok(Self {
            assignment,
            affinity,
            expected,
            inputs,
            dgp,
            seed: params.seed,
            dense_cap: crate::linalg::DEFAULT_DENSE_CAP,
            power: PowerOptions { tol: 1e-10, max_iter: 20_000 },
        })
    }

    pub fn from_config(cfg: &BoundsConfig) -> Result<Self> {
        cfg.validate()?;
        Self::new(&cfg.sbm, cfg.resolved_penalties()?, cfg.epsilon, cfg.dgp.clone())
    }

    pub fn bound_value(&self, kind: BoundKind) -> Result<f64> {
        let i = &self.inputs;
        Ok(match kind {
            BoundKind::Adjacency => i.thm1_adjacency(),
            BoundKind::Laplacian(_) => i.thm1_laplacian(),
            BoundKind::LaplacianInverse(s) => i.thm2(s),
            BoundKind::UnnormalizedInverse(s) => i.thm3(s),
            BoundKind::Bias(s) => {
                let d = self.require_dgp()?;
                i.thm4(s, norm(&d.mu_star), norm(&d.phi_star))
            }
            BoundKind::Variance(s) => {
                let d = self.require_dgp()?;
                i.thm5(s, d.sigma, d.sigma_w, d.sigma_f)
            }
        })
    }

    fn require_dgp(&self) -> Result<&DgpSpec> {
        self.dgp.as_ref().ok_or_else(|| Error::InvalidInput("bias and variance bounds need a dgp".into()))
    }

    /// Network for replication `r`.
    pub fn network(&self, r: usize) -> Result<BipartiteGraph> {
        let draw = derive_seed(tag::REPLICATION, r as u64);
        Ok(sample_edges(&self.assignment, &self.affinity, self.seed, draw)?.graph)
    }

    /// Deviations of the requested kinds on replication `r`.
    pub fn replicate(&self, r: usize, kinds: &[BoundKind]) -> Result<ReplicationDeviations> {
        let g = self.network(r)?;
        self.deviations(&g, kinds)
    }

    pub fn deviations(&self, g: &BipartiteGraph, kinds: &[BoundKind]) -> Result<ReplicationDeviations> {
        let en = &self.expected;
        let lam = en.penalties;
        let mut out = ReplicationDeviations { identity_ok: true, ..Default::default() };
        let mut push = |kind: BoundKind, est: Option<f64>| match est {
            Some(v) => out.values.push((kind, v)),
            None => out.failed.push(kind),
        };
        let power = |op: &dyn LinearOperator| {
            let e = operator_norm(op, self.power);
            e.converged.then_some(e.value)
        };
        let needs = |pred: fn(&BoundKind) -> bool| kinds.iter().any(pred);

        if needs(|k| matches!(k, BoundKind::Adjacency | BoundKind::Laplacian(_))) {
            let e = normalized_adjacency(g, lam)?;
            let ee = en.normalized_adjacency();
            let adj = power(&Difference::new(&e, &ee));
            if kinds.contains(&BoundKind::Adjacency) {
                push(BoundKind::Adjacency, adj);
            }
            for side in [Side::Worker, Side::Firm] {
                if kinds.contains(&BoundKind::Laplacian(side)) {
                    let l = Laplacian::new(g, lam, side, true)?;
                    let le = en.laplacian(side);
                    let v = power(&Difference::new(&l, &le));
                    if let (Some(a), Some(b)) = (adj, v) {
                        if b > 2.0 * a * (1.0 + 1e-6) + 1e-12 {
                            out.identity_ok = false;
                        }
                    }
                    push(BoundKind::Laplacian(side), v);
                }
            }
        }

        if needs(|k| matches!(k, BoundKind::LaplacianInverse(_) | BoundKind::UnnormalizedInverse(_))) {
            let opts = SolverOptions { tol: 1e-12, ..SolverOptions::default() };
            let sys = RidgeSystem::new(g, lam, None, opts)?;
            for side in [Side::Worker, Side::Firm] {
                for normalized in [true, false] {
                    let kind = if normalized { BoundKind::LaplacianInverse(side) } else { BoundKind::UnnormalizedInverse(side) };
                    if !kinds.contains(&kind) {
                        continue;
                    }
                    let failed = AtomicBool::new(false);
                    let inv = InverseOp { sys: &sys, side, normalized, failed: &failed };
                    let expected_inv = if normalized {
                        en.laplacian_inverse(side)?
                    } else {
                        en.unnormalized_laplacian_inverse(side)?
                    };
                    let v = power(&Difference::new(&inv, &expected_inv));
                    push(kind, if failed.load(Ordering::Relaxed) { None } else { v });
                }
            }
        }

        if needs(|k| matches!(k, BoundKind::Bias(_))) {
            let d = self.require_dgp()?;
            let a = &self.assignment;
            let b = random_beta_bias(g, lam, &a.worker_types, &a.firm_types, &d.mu_star, &d.phi_star)?;
            let bd = deterministic_bias(en, &d.mu_star, &d.phi_star)?;
            if kinds.contains(&BoundKind::Bias(Side::Worker)) {
                push(BoundKind::Bias(Side::Worker), Some(dist(&b.mu, &bd.mu)));
            }
            if kinds.contains(&BoundKind::Bias(Side::Firm)) {
                push(BoundKind::Bias(Side::Firm), Some(dist(&b.phi, &bd.phi)));
            }
        }

        if needs(|k| matches!(k, BoundKind::Variance(_))) {
            let d = self.require_dgp()?;
            if g.n_workers().max(g.n_firms()) > self.dense_cap {
                return Err(Error::DenseCapExceeded { size: g.n_workers().max(g.n_firms()), cap: self.dense_cap });
            }
            let v = random_beta_variance(g, lam, d.sigma, d.sigma_w, d.sigma_f, self.dense_cap)?;
            let (vw, vf) = deterministic_variance_operators(en, d.sigma, d.sigma_w, d.sigma_f)?;
            if kinds.contains(&BoundKind::Variance(Side::Worker)) {
                let diff = v.var_mu.as_ref().expect("below cap") - vw.to_dense();
                push(BoundKind::Variance(Side::Worker), Some(symmetric_spectral_norm(&diff)));
            }
            if kinds.contains(&BoundKind::Variance(Side::Firm)) {
                let diff = v.var_phi.as_ref().expect("below cap") - vf.to_dense();
                push(BoundKind::Variance(Side::Firm), Some(symmetric_spectral_norm(&diff)));
            }
        }
        Ok(out)
    }

    /// Runs `replications` draws for the given kinds and aggregates.
    pub fn run(&self, kinds: &[BoundKind], replications: usize) -> Result<BoundReport> {
        let reps: Vec<Result<ReplicationDeviations>> =
            (0..replications).into_par_iter().map(|r| self.replicate(r, kinds)).collect();
        let reps: Vec<ReplicationDeviations> = reps.into_iter().collect::<Result<_>>()?;
        let mut entries = Vec::new();
        for &kind in kinds {
            let bound = self.bound_value(kind)?;
            let (replication_index, devs): (Vec<usize>, Vec<f64>) = reps
                .iter()
                .enumerate()
                .filter_map(|(r, rep)| rep.values.iter().find(|(k, _)| *k == kind).map(|(_, v)| (r, *v)))
                .unzip();
            let failed = reps.iter().filter(|r| r.failed.contains(&kind)).count();
            let violations = devs.iter().filter(|d| **d > bound).count();
            entries.push(BoundEntry {
                theorem: kind.theorem(),
                kind,
                name: kind.label(),
                theoretical_bound: bound,
                probability_floor: self.inputs.probability_floor(kind),
                violation_rate: if devs.is_empty() { 0.0 } else { violations as f64 / devs.len() as f64 },
                empirical_deviations: devs,
                replication_index,
                failed_replications: failed,
                applicable: self.inputs.applicable,
            });
        }
        Ok(BoundReport {
            inputs: self.inputs,
            replications,
            entries,
            identity_violations: reps.iter().filter(|r| !r.identity_ok).count(),
        })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn check(cfg: &BoundsConfig, theorems: &[u8]) -> Result<BoundReport> {
    let exp = BoundExperiment::from_config(cfg)?;
    let kinds: Vec<BoundKind> = theorems.iter().flat_map(|t| BoundKind::for_theorem(*t)).collect();
    exp.run(&kinds, cfg.replications)
}

pub fn theorem1_check(cfg: &BoundsConfig) -> Result<BoundReport> {
    check(cfg, &[1])
}
pub fn theorem2_check(cfg: &BoundsConfig) -> Result<BoundReport> {
    check(cfg, &[2])
}
pub fn theorem3_check(cfg: &BoundsConfig) -> Result<BoundReport> {
    check(cfg, &[3])
}
pub fn theorem4_check(cfg: &BoundsConfig) -> Result<BoundReport> {
    check(cfg, &[4])
}
pub fn theorem5_check(cfg: &BoundsConfig) -> Result<BoundReport> {
    check(cfg, &[5])
}

/// All theorems listed in the config.
pub fn run_bounds(cfg: &BoundsConfig) -> Result<BoundReport> {
    check(cfg, &cfg.theorems)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn boundary_gives_unit_t() {
        // ln((n+p)/ε) = 3 and M = 1/9 → t = 1
        let eps = 2.0 / 3f64.exp();
        let pen = RidgePenalties::uniform(9.0).unwrap();
        let b = BoundInputs::from_scalars(1, 1, pen, eps, (0.0, 0.0), (0.0, 0.0)).unwrap();
        assert_relative_eq!(b.t, 1.0, max_relative = 1e-14);
        assert!(b.applicable);
    }

    #[test]
    fn remark_penalty_is_applicable() {
        let (n, p) = (600usize, 200usize);
        let nu = 0.5;
        let eps = ((n + p) as f64).powf(-nu);
        let pen = remark_penalty(n, p, nu).unwrap();
        let b = BoundInputs::from_scalars(n, p, pen, eps, (0.0, 1.0), (0.0, 5.0)).unwrap();
        assert!(b.applicable);
        assert!(b.t <= 1.0);
    }

    #[test]
    fn epsilon_range_checked() {
        let pen = RidgePenalties::uniform(1.0).unwrap();
        assert!(BoundInputs::from_scalars(2, 2, pen, 1.0, (1.0, 1.0), (1.0, 1.0)).is_err());
        assert!(BoundInputs::from_scalars(2, 2, pen, 0.0, (1.0, 1.0), (1.0, 1.0)).is_err());
    }

    #[test]
    fn zero_noise_variance_bound_is_zero() {
        let pen = RidgePenalties::uniform(4.0).unwrap();
        let b = BoundInputs::from_scalars(10, 5, pen, 0.1, (1.0, 2.0), (0.5, 3.0)).unwrap();
        assert_eq!(b.thm5(Side::Worker, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(b.thm5(Side::Firm, 0.0, 0.0, 0.0), 0.0);
        assert_eq!(b.thm4(Side::Worker, 0.0, 0.0), 0.0);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
