//! Ridge and OLS estimation of the two-way fixed-effect model
//! `y = W μ + F φ + u`, together with closed-form bias and variance objects.
//!
//! The normal equations are reduced to the firm-side Schur system
//! `L̃_{f,λ} φ̂ = r_f − Bᵀ D_{w,λ}^{-1} r_w` and `μ̂` is recovered by
//! back-substitution, so `W` and `F` are never formed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, Laplacian, NodeMapping, RidgePenalties, Side};
use crate::linalg::{pcg, DiagPlusLowRank, LinearOperator, DEFAULT_DENSE_CAP};
use crate::rng::{self, tag};
use crate::sbm::{ExpectedNetwork, NodeAssignment};

/// Outcomes on a match graph, one value per observation in canonical
/// (worker, firm, spell) order.
#[derive(Debug, Clone)]
pub struct OutcomePanel {
    pub graph: BipartiteGraph,
    pub y: Vec<f64>,
    /// Maps graph node indices back to the node labels of the source data.
    pub mapping: NodeMapping,
}

impl OutcomePanel {
    pub fn new(graph: BipartiteGraph, y: Vec<f64>) -> Result<Self> {
        let mapping = NodeMapping::identity(graph.n_workers(), graph.n_firms());
        Self::with_mapping(graph, y, mapping)
    }

    pub fn with_mapping(graph: BipartiteGraph, y: Vec<f64>, mapping: NodeMapping) -> Result<Self> {
        if y.len() as u64 != graph.n_obs() {
            return Err(Error::InvalidInput(format!("{} outcomes for {} observations", y.len(), graph.n_obs())));
        }
        if mapping.workers.len() != graph.n_workers() || mapping.firms.len() != graph.n_firms() {
            return Err(Error::InvalidInput("node mapping does not match the graph".into()));
        }
        Ok(Self { graph, y, mapping })
    }

    /// Builds a panel from unordered `(worker, firm, y)` rows. Rows for the same
    /// pair keep their relative order as spells.
    pub fn from_rows(n_workers: usize, n_firms: usize, rows: &[(usize, usize, f64)]) -> Result<Self> {
        let edges: Vec<(usize, usize, i64)> = rows.iter().map(|&(i, j, _)| (i, j, 1)).collect();
        let graph = BipartiteGraph::from_edges(n_workers, n_firms, &edges)?;
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by_key(|&r| (rows[r].0, rows[r].1));
        let y = order.iter().map(|&r| rows[r].2).collect();
        Self::new(graph, y)
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// `(worker, firm, y)` in canonical order.
    pub fn rows(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.graph.observations().zip(&self.y).map(|((i, j), &y)| (i, j, y))
    }

    /// `(Wᵀ y, Fᵀ y)`.
    pub fn sums(&self) -> (Vec<f64>, Vec<f64>) {
        let mut rw = vec![0.0; self.graph.n_workers()];
        let mut rf = vec![0.0; self.graph.n_firms()];
        for (i, j, y) in self.rows() {
            rw[i] += y;
            rf[j] += y;
        }
        (rw, rf)
    }

    /// Restriction to the largest connected component.
    pub fn largest_component(&self) -> Result<OutcomePanel> {
        let (sub, local) = self.graph.largest_component()?;
        let y = self
            .rows()
            .filter(|&(i, _, _)| local.worker_new(i).is_some())
            .map(|(_, _, y)| y)
            .collect();
        let mapping = local.compose(&self.mapping);
        OutcomePanel::with_mapping(sub, y, mapping)
    }
}

/// Parameters of the outcome model
/// `μ = Z_w μ* + σ_w ε_w`, `φ = Z_f φ* + σ_f ε_f`, `u ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DgpSpec {
    pub mu_star: Vec<f64>,
    pub phi_star: Vec<f64>,
    /// Residual standard deviation.
    pub sigma: f64,
    pub sigma_w: f64,
    pub sigma_f: f64,
}

impl DgpSpec {
    /// Wage design of the simulations: `μ_i = k_i + √2 ε`, `φ_j = 0.4 ℓ_j + ε`
    /// with 0-based types and residual sd 2.
    pub fn simulation_design(k: usize) -> Self {
        Self {
            mu_star: (0..k).map(|g| g as f64).collect(),
            phi_star: (0..k).map(|g| 0.4 * g as f64).collect(),
            sigma: 2.0,
            sigma_w: 2f64.sqrt(),
            sigma_f: 1.0,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        if self.mu_star.len() != k || self.phi_star.len() != k {
            return Err(Error::InvalidInput(format!("mu_star and phi_star need length K = {k}")));
        }
        for (name, v) in [("sigma", self.sigma), ("sigma_w", self.sigma_w), ("sigma_f", self.sigma_f)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// A DGP together with one realization of the fixed effects on all nodes of
/// an assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedEffectDgp {
    pub spec: DgpSpec,
    pub mu: Vec<f64>,
    pub phi: Vec<f64>,
}

impl FixedEffectDgp {
    pub fn draw(assignment: &NodeAssignment, spec: &DgpSpec, seed: u64) -> Result<Self> {
        spec.validate(assignment.k)?;
        let mut rw = rng::stream(seed, tag::WORKER_EFFECT, 0);
        let mu = assignment
            .worker_types
            .iter()
            .map(|&k| spec.mu_star[k] + spec.sigma_w * rw.sample::<f64, _>(StandardNormal))
            .collect();
        let mut rf = rng::stream(seed, tag::FIRM_EFFECT, 0);
        let phi = assignment
            .firm_types
            .iter()
            .map(|&l| spec.phi_star[l] + spec.sigma_f * rf.sample::<f64, _>(StandardNormal))
            .collect();
        Ok(Self { spec: spec.clone(), mu, phi })
    }
}

/// `y_r = μ_{i(r)} + φ_{j(r)} + σ ε_r` on `graph`, whose nodes map to the
/// DGP's node indices through `mapping`. `draw` selects an independent
/// residual stream.
pub fn generate_outcomes(
    graph: &BipartiteGraph,
    mapping: &NodeMapping,
    dgp: &FixedEffectDgp,
    seed: u64,
    draw: u64,
) -> Result<OutcomePanel> {
    if mapping.workers.iter().any(|&i| i >= dgp.mu.len()) || mapping.firms.iter().any(|&j| j >= dgp.phi.len()) {
        return Err(Error::InvalidInput("graph nodes are not covered by the DGP".into()));
    }
    let mut r = rng::stream(seed, tag::RESIDUAL, draw);
    let sigma = dgp.spec.sigma;
    let y = graph
        .observations()
        .map(|(i, j)| dgp.mu[mapping.workers[i]] + dgp.phi[mapping.firms[j]] + sigma * r.sample::<f64, _>(StandardNormal))
        .collect();
    OutcomePanel::with_mapping(graph.clone(), y, mapping.clone())
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    /// Largest firm count solved by dense Cholesky; PCG above.
    pub dense_solve_cap: usize,
    pub tol: f64,
    /// Iteration limit for PCG; 0 means `20 p + 1000`.
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { dense_solve_cap: 400, tol: 1e-10, max_iter: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    DenseCholesky,
    Pcg,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverInfo {
    pub method: SolverMethod,
    pub iterations: usize,
    /// Relative residual of the firm Schur system.
    pub schur_residual: f64,
    /// `‖(XᵀX + Λ)β̂ − XᵀY‖ / ‖XᵀY‖`.
    pub normal_equation_residual: f64,
}

/// Factorized (or preconditioned) regularized normal equations on a fixed
/// graph. Supports an optional pinned firm whose effect is fixed at zero,
/// which is how OLS is identified.
pub struct RidgeSystem<'g> {
    graph: &'g BipartiteGraph,
    penalties: RidgePenalties,
    dw: Vec<f64>,
    df: Vec<f64>,
    pin: Option<usize>,
    opts: SolverOptions,
    schur: Laplacian<'g>,
    diag: Vec<f64>,
    dense: Option<Cholesky<f64, Dyn>>,
}

struct PinnedSchur<'a, 'g> {
    sys: &'a RidgeSystem<'g>,
}

impl LinearOperator for PinnedSchur<'_, '_> {
    fn nrows(&self) -> usize {
        self.sys.df.len()
    }
    fn ncols(&self) -> usize {
        self.sys.df.len()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        match self.sys.pin {
            None => self.sys.schur.apply(x, y),
            Some(pin) => {
                let mut xs = x.to_vec();
                xs[pin] = 0.0;
                self.sys.schur.apply(&xs, y);
                y[pin] = x[pin];
            }
        }
    }
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        self.apply(x, y)
    }
}

impl<'g> RidgeSystem<'g> {
    pub fn new(graph: &'g BipartiteGraph, penalties: RidgePenalties, pin: Option<usize>, opts: SolverOptions) -> Result<Self> {
        let p = graph.n_firms();
        if let Some(j) = pin {
            if j >= p {
                return Err(Error::IndexOutOfRange { kind: "pinned firm", index: j, size: p });
            }
        }
        let dw: Vec<f64> = graph.worker_degrees().iter().map(|&d| d as f64 + penalties.lambda_w).collect();
        let df: Vec<f64> = graph.firm_degrees().iter().map(|&d| d as f64 + penalties.lambda_f).collect();
        if let Some(i) = dw.iter().position(|d| *d <= 0.0) {
            return Err(Error::ZeroDegree { kind: "worker", index: i });
        }
        if let Some(j) = df.iter().position(|d| *d <= 0.0) {
            return Err(Error::ZeroDegree { kind: "firm", index: j });
        }
        let schur = Laplacian::new(graph, penalties, Side::Firm, false)?;
        let mut diag = schur.diagonal();
        if let Some(j) = pin {
            diag[j] = 1.0;
        }
        let mut sys = Self { graph, penalties, dw, df, pin, opts, schur, diag, dense: None };
        if p <= opts.dense_solve_cap {
            let a = sys.dense_schur();
            sys.dense = Some(a.cholesky().ok_or_else(|| {
                Error::Singular(format!("firm Schur complement is not positive definite (p = {p}); is the graph connected?"))
            })?);
        }
        Ok(sys)
    }

    pub fn graph(&self) -> &BipartiteGraph {
        self.graph
    }

    pub fn penalties(&self) -> RidgePenalties {
        self.penalties
    }

    pub fn pin(&self) -> Option<usize> {
        self.pin
    }

    /// Regularized degrees `(D_{w,λ}, D_{f,λ})`.
    pub fn degrees(&self) -> (&[f64], &[f64]) {
        (&self.dw, &self.df)
    }

    /// Dense `L̃_{f,λ}` with the pinned row and column replaced by the identity.
    pub fn dense_schur(&self) -> DMatrix<f64> {
        let mut a = self.schur.to_dense();
        if let Some(j) = self.pin {
            a.row_mut(j).fill(0.0);
            a.column_mut(j).fill(0.0);
            a[(j, j)] = 1.0;
        }
        a
    }

    pub fn method(&self) -> SolverMethod {
        if self.dense.is_some() {
            SolverMethod::DenseCholesky
        } else {
            SolverMethod::Pcg
        }
    }

    /// `L̃_{f,λ}^{-1} b` (on the pinned subspace when a firm is pinned).
    pub fn solve_firm_with_stats(&self, rhs: &[f64]) -> Result<(Vec<f64>, usize, f64)> {
        let mut b = rhs.to_vec();
        if let Some(j) = self.pin {
            b[j] = 0.0;
        }
        let op = PinnedSchur { sys: self };
        if let Some(chol) = &self.dense {
            let x = chol.solve(&DVector::from_vec(b.clone()));
            let x: Vec<f64> = x.iter().copied().collect();
            let r = op.apply_vec(&x);
            let bn = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            let rn = r.iter().zip(&b).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
            return Ok((x, 0, if bn > 0.0 { rn / bn } else { 0.0 }));
        }
        let max_iter = if self.opts.max_iter == 0 { 20 * self.df.len() + 1000 } else { self.opts.max_iter };
        let mut x = vec![0.0; b.len()];
        let info = pcg(&op, &self.diag, &b, &mut x, self.opts.tol, max_iter);
        if !info.converged {
            return Err(Error::NotConverged { iterations: info.iterations, residual: info.relative_residual });
        }
        Ok((x, info.iterations, info.relative_residual))
    }

    pub fn solve_firm(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.solve_firm_with_stats(rhs)?.0)
    }

    /// `L̃_{w,λ}^{-1} b = D_{w,λ}^{-1} b + D_{w,λ}^{-1} B L̃_{f,λ}^{-1} Bᵀ D_{w,λ}^{-1} b`.
    pub fn solve_worker(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let s: Vec<f64> = rhs.iter().zip(&self.dw).map(|(b, d)| b / d).collect();
        let mut t = vec![0.0; self.df.len()];
        self.graph.mul_bt(&s, &mut t);
        let z = self.solve_firm(&t)?;
        let mut bz = vec![0.0; self.dw.len()];
        self.graph.mul_b(&z, &mut bz);
        Ok(s.iter().zip(&bz).zip(&self.dw).map(|((a, b), d)| a + b / d).collect())
    }

    /// Solves `(XᵀX + Λ) (μ, φ) = (r_w, r_f)`.
    pub fn solve_normal(&self, rw: &[f64], rf: &[f64]) -> Result<(Vec<f64>, Vec<f64>, usize, f64)> {
        let s: Vec<f64> = rw.iter().zip(&self.dw).map(|(b, d)| b / d).collect();
        let mut t = vec![0.0; self.df.len()];
        self.graph.mul_bt(&s, &mut t);
        let rhs: Vec<f64> = rf.iter().zip(&t).map(|(a, b)| a - b).collect();
        let (phi, iters, res) = self.solve_firm_with_stats(&rhs)?;
        let mut bphi = vec![0.0; self.dw.len()];
        self.graph.mul_b(&phi, &mut bphi);
        let mu = rw.iter().zip(&bphi).zip(&self.dw).map(|((r, b), d)| (r - b) / d).collect();
        Ok((mu, phi, iters, res))
    }

    /// Relative residual of the (pinned) normal equations.
    pub fn normal_residual(&self, mu: &[f64], phi: &[f64], rw: &[f64], rf: &[f64]) -> f64 {
        let mut bphi = vec![0.0; mu.len()];
        self.graph.mul_b(phi, &mut bphi);
        let mut btmu = vec![0.0; phi.len()];
        self.graph.mul_bt(mu, &mut btmu);
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..mu.len() {
            num += (self.dw[i] * mu[i] + bphi[i] - rw[i]).powi(2);
            den += rw[i] * rw[i];
        }
        for j in 0..phi.len() {
            den += rf[j] * rf[j];
            if Some(j) != self.pin {
                num += (btmu[j] + self.df[j] * phi[j] - rf[j]).powi(2);
            }
        }
        if den > 0.0 {
            (num / den).sqrt()
        } else {
            num.sqrt()
        }
    }

    /// Dense `L̃_{f,λ}^{-1}`; the pinned row and column are zero.
    pub fn firm_inverse_dense(&self) -> Result<DMatrix<f64>> {
        let a = self.dense_schur();
        let mut inv = a
            .cholesky()
            .ok_or_else(|| Error::Singular("firm Schur complement is not positive definite".into()))?
            .inverse();
        if let Some(j) = self.pin {
            inv.row_mut(j).fill(0.0);
            inv.column_mut(j).fill(0.0);
        }
        Ok(inv)
    }

    /// Dense `L̃_{w,λ}^{-1}` from the firm-side inverse.
    pub fn worker_inverse_dense(&self, firm_inv: &DMatrix<f64>) -> DMatrix<f64> {
        let b = self.graph.dense_adjacency();
        let n = self.dw.len();
        let db = DMatrix::from_fn(n, self.df.len(), |i, j| b[(i, j)] / self.dw[i]);
        let mut out = &db * firm_inv * db.transpose();
        for i in 0..n {
            out[(i, i)] += 1.0 / self.dw[i];
        }
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RidgeFit {
    pub mu_hat: Vec<f64>,
    pub phi_hat: Vec<f64>,
    pub penalties: RidgePenalties,
    #[serde(skip)]
    pub residuals: Vec<f64>,
    pub solver_info: SolverInfo,
    /// Firm whose effect was fixed at zero (OLS only).
    pub pinned_firm: Option<usize>,
}

impl RidgeFit {
    pub fn fitted(&self, panel: &OutcomePanel) -> Vec<f64> {
        panel.graph.observations().map(|(i, j)| self.mu_hat[i] + self.phi_hat[j]).collect()
    }
}

fn fit_with_system(panel: &OutcomePanel, sys: &RidgeSystem<'_>) -> Result<RidgeFit> {
    let (rw, rf) = panel.sums();
    let (mu_hat, phi_hat, iterations, schur_residual) = sys.solve_normal(&rw, &rf)?;
    let normal_equation_residual = sys.normal_residual(&mu_hat, &phi_hat, &rw, &rf);
    let residuals = panel.rows().map(|(i, j, y)| y - mu_hat[i] - phi_hat[j]).collect();
    Ok(RidgeFit {
        mu_hat,
        phi_hat,
        penalties: sys.penalties(),
        residuals,
        solver_info: SolverInfo { method: sys.method(), iterations, schur_residual, normal_equation_residual },
        pinned_firm: sys.pin(),
    })
}

/// Ridge estimate with default solver options.
pub fn ridge_fit(panel: &OutcomePanel, penalties: RidgePenalties) -> Result<RidgeFit> {
    ridge_fit_with(panel, penalties, SolverOptions::default())
}

pub fn ridge_fit_with(panel: &OutcomePanel, penalties: RidgePenalties, opts: SolverOptions) -> Result<RidgeFit> {
    if !penalties.is_positive() {
        return Err(Error::ZeroPenalty);
    }
    let sys = RidgeSystem::new(&panel.graph, penalties, None, opts)?;
    fit_with_system(panel, &sys)
}

/// OLS on a connected graph with the effect of firm 0 fixed at zero.
pub fn ols_fit(panel: &OutcomePanel) -> Result<RidgeFit> {
    ols_fit_pinned(panel, 0, SolverOptions::default())
}

pub fn ols_fit_pinned(panel: &OutcomePanel, pin: usize, opts: SolverOptions) -> Result<RidgeFit> {
    check_connected(&panel.graph)?;
    let sys = RidgeSystem::new(&panel.graph, RidgePenalties::zero(), Some(pin), opts)?;
    fit_with_system(panel, &sys)
}

fn check_connected(g: &BipartiteGraph) -> Result<()> {
    if g.n_workers() == 0 || g.n_firms() == 0 {
        return Err(Error::InvalidInput("OLS needs at least one worker and one firm".into()));
    }
    let labeling = g.connected_components();
    if labeling.n_components() > 1 {
        return Err(Error::Disconnected { n_components: labeling.n_components(), detail: labeling.describe(10) });
    }
    Ok(())
}

/// Bias vectors for `μ̂` and `φ̂`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bias {
    pub mu: Vec<f64>,
    pub phi: Vec<f64>,
}

/// `E(μ̂ − μ) = L̃_w^{-1}(−λ_w μ + λ_f B D_f^{-1} φ)` and
/// `E(φ̂ − φ) = L̃_f^{-1}(λ_w Bᵀ D_w^{-1} μ − λ_f φ)` for fixed effects.
pub fn insample_bias(g: &BipartiteGraph, penalties: RidgePenalties, mu: &[f64], phi: &[f64]) -> Result<Bias> {
    if !penalties.is_positive() {
        return Err(Error::ZeroPenalty);
    }
    let sys = RidgeSystem::new(g, penalties, None, SolverOptions::default())?;
    bias_with_system(&sys, mu, phi)
}

fn bias_with_system(sys: &RidgeSystem<'_>, mu: &[f64], phi: &[f64]) -> Result<Bias> {
    let g = sys.graph();
    let (dw, df) = sys.degrees();
    let RidgePenalties { lambda_w, lambda_f } = sys.penalties();
    let scaled_phi: Vec<f64> = phi.iter().zip(df).map(|(v, d)| v / d).collect();
    let mut rhs_w = vec![0.0; mu.len()];
    g.mul_b(&scaled_phi, &mut rhs_w);
    for (r, m) in rhs_w.iter_mut().zip(mu) {
        *r = lambda_f * *r - lambda_w * m;
    }
    let scaled_mu: Vec<f64> = mu.iter().zip(dw).map(|(v, d)| v / d).collect();
    let mut rhs_f = vec![0.0; phi.len()];
    g.mul_bt(&scaled_mu, &mut rhs_f);
    for (r, f) in rhs_f.iter_mut().zip(phi) {
        *r = lambda_w * *r - lambda_f * f;
    }
    Ok(Bias { mu: sys.solve_worker(&rhs_w)?, phi: sys.solve_firm(&rhs_f)? })
}

/// `b_{μ,λ}`, `b_{φ,λ}` for random effects: the in-sample bias at the group
/// means `Z_w μ*`, `Z_f φ*`.
pub fn random_beta_bias(
    g: &BipartiteGraph,
    penalties: RidgePenalties,
    worker_types: &[usize],
    firm_types: &[usize],
    mu_star: &[f64],
    phi_star: &[f64],
) -> Result<Bias> {
    let mu: Vec<f64> = worker_types.iter().map(|&k| mu_star[k]).collect();
    let phi: Vec<f64> = firm_types.iter().map(|&l| phi_star[l]).collect();
    insample_bias(g, penalties, &mu, &phi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkSource {
    Realized,
    Expected,
}

/// Variance objects of `(μ̂, φ̂)`. Full matrices are kept only below the dense
/// cap; diagonals always.
#[derive(Debug, Clone)]
pub struct MomentReport {
    pub source: NetworkSource,
    pub var_mu_diag: Vec<f64>,
    pub var_phi_diag: Vec<f64>,
    pub var_mu: Option<DMatrix<f64>>,
    pub var_phi: Option<DMatrix<f64>>,
    pub cov_mu_phi: Option<DMatrix<f64>>,
}

impl MomentReport {
    fn from_dense(source: NetworkSource, vm: DMatrix<f64>, vf: DMatrix<f64>, cov: Option<DMatrix<f64>>) -> Self {
        Self {
            source,
            var_mu_diag: vm.diagonal().iter().copied().collect(),
            var_phi_diag: vf.diagonal().iter().copied().collect(),
            var_mu: Some(vm),
            var_phi: Some(vf),
            cov_mu_phi: cov,
        }
    }
}

/// Coefficients of the sandwich `σ² L̃^{-1} + L̃^{-1}[a_w I + a_f G] L̃^{-1}`.
#[derive(Debug, Clone, Copy)]
struct Sandwich {
    sigma2: f64,
    /// Coefficient on the identity (worker side) or the cross-gram (firm side).
    a_w: f64,
    a_f: f64,
}

fn sandwich_coefficients(penalties: RidgePenalties, sigma: f64, sigma_w: f64, sigma_f: f64) -> Sandwich {
    let RidgePenalties { lambda_w, lambda_f } = penalties;
    let s2 = sigma * sigma;
    Sandwich {
        sigma2: s2,
        a_w: lambda_w * lambda_w * sigma_w * sigma_w - lambda_w * s2,
        a_f: lambda_f * lambda_f * sigma_f * sigma_f - lambda_f * s2,
    }
}

/// Fixed-effect conditional variances of the ridge estimator:
/// `V(μ̂) = σ² L̃_w^{-1} − σ² L̃_w^{-1}[λ_w I + λ_f B D_f^{-2} Bᵀ] L̃_w^{-1}`, the
/// analogous `V(φ̂)`, and `Cov(μ̂, φ̂)` (full matrices only below `dense_cap`).
pub fn insample_variance(g: &BipartiteGraph, penalties: RidgePenalties, sigma: f64, dense_cap: usize) -> Result<MomentReport> {
    if !penalties.is_positive() {
        return Err(Error::ZeroPenalty);
    }
    let RidgePenalties { lambda_w, lambda_f } = penalties;
    let s2 = sigma * sigma;
    // fixed β: a_w = −λ_w σ², a_f = −λ_f σ² (the σ_w = σ_f = 0 case)
    let coef = Sandwich { sigma2: s2, a_w: -lambda_w * s2, a_f: -lambda_f * s2 };
    let sys = RidgeSystem::new(g, penalties, None, SolverOptions::default())?;
    if g.n_workers().max(g.n_firms()) <= dense_cap {
        let (vm, vf, fi, wi) = dense_sandwiches(&sys, coef)?;
        let (dw, df) = sys.degrees();
        let b = g.dense_adjacency();
        let n = g.n_workers();
        let p = g.n_firms();
        let bdf = DMatrix::from_fn(n, p, |i, j| b[(i, j)] / df[j]);
        let mid = DMatrix::from_fn(n, p, |i, j| lambda_w * b[(i, j)] / dw[i] + lambda_f * b[(i, j)] / df[j]);
        let cov = (-(&wi * &bdf) + &wi * mid * &fi) * s2;
        return Ok(MomentReport::from_dense(NetworkSource::Realized, vm, vf, Some(cov)));
    }
    let (dm, df) = probed_sandwich_diagonals(&sys, coef)?;
    Ok(MomentReport {
        source: NetworkSource::Realized,
        var_mu_diag: dm,
        var_phi_diag: df,
        var_mu: None,
        var_phi: None,
        cov_mu_phi: None,
    })
}

/// Random-effect variances `V_{w,λ}`, `V_{f,λ}` of `μ̂ − μ` and `φ̂ − φ`.
pub fn random_beta_variance(
    g: &BipartiteGraph,
    penalties: RidgePenalties,
    sigma: f64,
    sigma_w: f64,
    sigma_f: f64,
    dense_cap: usize,
) -> Result<MomentReport> {
    if !penalties.is_positive() {
        return Err(Error::ZeroPenalty);
    }
    let coef = sandwich_coefficients(penalties, sigma, sigma_w, sigma_f);
    let sys = RidgeSystem::new(g, penalties, None, SolverOptions::default())?;
    if g.n_workers().max(g.n_firms()) <= dense_cap {
        let (vm, vf, _, _) = dense_sandwiches(&sys, coef)?;
        return Ok(MomentReport::from_dense(NetworkSource::Realized, vm, vf, None));
    }
    let (dm, df) = probed_sandwich_diagonals(&sys, coef)?;
    Ok(MomentReport {
        source: NetworkSource::Realized,
        var_mu_diag: dm,
        var_phi_diag: df,
        var_mu: None,
        var_phi: None,
        cov_mu_phi: None,
    })
}

/// Dense `(V_w, V_f, L̃_f^{-1}, L̃_w^{-1})` for sandwich coefficients `coef`.
fn dense_sandwiches(
    sys: &RidgeSystem<'_>,
    coef: Sandwich,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let g = sys.graph();
    let (dw, df) = sys.degrees();
    let (n, p) = (g.n_workers(), g.n_firms());
    let fi = sys.firm_inverse_dense()?;
    let wi = sys.worker_inverse_dense(&fi);
    let b = g.dense_adjacency();
    let bdf2 = DMatrix::from_fn(n, p, |i, j| b[(i, j)] / df[j]);
    let mut mid_w = &bdf2 * bdf2.transpose() * coef.a_f;
    for i in 0..n {
        mid_w[(i, i)] += coef.a_w;
    }
    let bdw = DMatrix::from_fn(n, p, |i, j| b[(i, j)] / dw[i]);
    let mut mid_f = bdw.transpose() * &bdw * coef.a_w;
    for j in 0..p {
        mid_f[(j, j)] += coef.a_f;
    }
    let mut vm = &wi * coef.sigma2 + &wi * mid_w * &wi;
    let mut vf = &fi * coef.sigma2 + &fi * mid_f * &fi;
    vm = (&vm + vm.transpose()) * 0.5;
    vf = (&vf + vf.transpose()) * 0.5;
    Ok((vm, vf, fi, wi))
}

/// Diagonals of the sandwiches by one solve per coordinate.
fn probed_sandwich_diagonals(sys: &RidgeSystem<'_>, coef: Sandwich) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = sys.graph();
    let (dw, df) = sys.degrees();
    let (n, p) = (g.n_workers(), g.n_firms());
    let worker: Result<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            let x = sys.solve_worker(&e)?;
            let mut t = vec![0.0; p];
            g.mul_bt(&x, &mut t);
            let gram: f64 = t.iter().zip(df).map(|(v, d)| (v / d).powi(2)).sum();
            let xx: f64 = x.iter().map(|v| v * v).sum();
            Ok(coef.sigma2 * x[i] + coef.a_w * xx + coef.a_f * gram)
        })
        .collect();
    let firm: Result<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![0.0; p];
            e[j] = 1.0;
            let x = sys.solve_firm(&e)?;
            let mut t = vec![0.0; n];
            g.mul_b(&x, &mut t);
            let gram: f64 = t.iter().zip(dw).map(|(v, d)| (v / d).powi(2)).sum();
            let xx: f64 = x.iter().map(|v| v * v).sum();
            Ok(coef.sigma2 * x[j] + coef.a_f * xx + coef.a_w * gram)
        })
        .collect();
    Ok((worker?, firm?))
}

/// `𝔟_{μ,λ} = 𝔏̃_w^{-1}(−λ_w Z_w μ* + λ_f 𝔅 𝔇_f^{-1} Z_f φ*)` and its firm
/// analogue `𝔏̃_f^{-1}(−λ_f Z_f φ* + λ_w 𝔅ᵀ 𝔇_w^{-1} Z_w μ*)`.
pub fn deterministic_bias(en: &ExpectedNetwork, mu_star: &[f64], phi_star: &[f64]) -> Result<Bias> {
    let RidgePenalties { lambda_w, lambda_f } = en.penalties;
    if !en.penalties.is_positive() {
        return Err(Error::ZeroPenalty);
    }
    let a = &en.assignment;
    if mu_star.len() != a.k || phi_star.len() != a.k {
        return Err(Error::InvalidInput("mu_star and phi_star need length K".into()));
    }
    let dw = en.regularized_degrees(Side::Worker);
    let df = en.regularized_degrees(Side::Firm);
    let zmu: Vec<f64> = a.worker_types.iter().map(|&k| mu_star[k]).collect();
    let zphi: Vec<f64> = a.firm_types.iter().map(|&l| phi_star[l]).collect();
    let scaled_phi: Vec<f64> = zphi.iter().zip(df.iter()).map(|(v, d)| v / d).collect();
    let bphi = en.mul_b(&scaled_phi);
    let rhs_w: Vec<f64> = zmu.iter().zip(&bphi).map(|(m, b)| -lambda_w * m + lambda_f * b).collect();
    let scaled_mu: Vec<f64> = zmu.iter().zip(dw.iter()).map(|(v, d)| v / d).collect();
    let btmu = en.mul_bt(&scaled_mu);
    let rhs_f: Vec<f64> = zphi.iter().zip(&btmu).map(|(f, b)| -lambda_f * f + lambda_w * b).collect();
    let wi = en.unnormalized_laplacian_inverse(Side::Worker)?;
    let fi = en.unnormalized_laplacian_inverse(Side::Firm)?;
    Ok(Bias { mu: wi.apply_vec(&rhs_w), phi: fi.apply_vec(&rhs_f) })
}

/// `(𝔙_{w,λ}, 𝔙_{f,λ})` in diagonal-plus-low-rank form.
pub fn deterministic_variance_operators(
    en: &ExpectedNetwork,
    sigma: f64,
    sigma_w: f64,
    sigma_f: f64,
) -> Result<(DiagPlusLowRank, DiagPlusLowRank)> {
    if !en.penalties.is_positive() {
        return Err(Error::ZeroPenalty);
    }
    let coef = sandwich_coefficients(en.penalties, sigma, sigma_w, sigma_f);
    let build = |side: Side, a_id: f64, a_gram: f64| -> Result<DiagPlusLowRank> {
        let inv = en.unnormalized_laplacian_inverse(side)?;
        let gram = en.cross_gram(side);
        let mid = DiagPlusLowRank::new(DVector::from_element(inv.dim(), a_id), gram.factor.clone(), &gram.core * a_gram);
        Ok(inv.scale(coef.sigma2).add(&inv.sandwich(&mid)))
    };
    Ok((build(Side::Worker, coef.a_w, coef.a_f)?, build(Side::Firm, coef.a_f, coef.a_w)?))
}

/// `𝔙_{w,λ}`, `𝔙_{f,λ}`; full matrices below `dense_cap`.
pub fn deterministic_variance(
    en: &ExpectedNetwork,
    sigma: f64,
    sigma_w: f64,
    sigma_f: f64,
    dense_cap: usize,
) -> Result<MomentReport> {
    let (vw, vf) = deterministic_variance_operators(en, sigma, sigma_w, sigma_f)?;
    let full = en.n_workers().max(en.n_firms()) <= dense_cap;
    Ok(MomentReport {
        source: NetworkSource::Expected,
        var_mu_diag: vw.diagonal().iter().copied().collect(),
        var_phi_diag: vf.diagonal().iter().copied().collect(),
        var_mu: full.then(|| vw.to_dense()),
        var_phi: full.then(|| vf.to_dense()),
        cov_mu_phi: None,
    })
}

/// Options for the trace term of the debiased quadratics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceOptions {
    /// Exact traces (dense inverse) up to this many firms.
    pub dense_cap: usize,
    pub probes: usize,
    pub seed: u64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { dense_cap: DEFAULT_DENSE_CAP, probes: 64, seed: 0 }
    }
}

/// Plug-in and homoscedasticity-corrected variance components of an OLS fit.
#[derive(Debug, Clone, Serialize)]
pub struct DebiasedComponents {
    pub sigma2_hat: f64,
    pub var_y: f64,
    pub plug_in: [f64; 3],
    /// `σ̂² tr(Q S)` for `Var(Wμ̂)`, `Var(Fφ̂)`, `Cov(Wμ̂, Fφ̂)`.
    pub corrections: [f64; 3],
    pub corrected: [f64; 3],
    pub exact_trace: bool,
}

/// Plug-in `(Var(Wμ), Var(Fφ), Cov(Wμ, Fφ))` over observations (1/N).
pub fn effect_moments(panel: &OutcomePanel, mu: &[f64], phi: &[f64]) -> [f64; 3] {
    let n = panel.n_obs() as f64;
    let (mut sw, mut sf) = (0.0, 0.0);
    for (i, j) in panel.graph.observations() {
        sw += mu[i];
        sf += phi[j];
    }
    let (mw, mf) = (sw / n, sf / n);
    let (mut vw, mut vf, mut c) = (0.0, 0.0, 0.0);
    for (i, j) in panel.graph.observations() {
        let (a, b) = (mu[i] - mw, phi[j] - mf);
        vw += a * a;
        vf += b * b;
        c += a * b;
    }
    [vw / n, vf / n, c / n]
}

pub fn population_variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

/// Homoscedastic bias correction of the OLS variance components:
/// `E[β̂ᵀQβ̂] = βᵀQβ + σ² tr(Q S)` with `S` the pinned `(XᵀX)^{-1}`.
///
/// With `T = tr(D_f S_ff)` and `q = d_fᵀ S_ff d_f`, the three traces are
/// `(n + T − (p−1) − 1 − q/N)/N`, `(T − q/N)/N` and `(q/N − T + (p−1))/N`.
pub fn debiased_quadratics(panel: &OutcomePanel, fit: &RidgeFit, opts: TraceOptions) -> Result<DebiasedComponents> {
    let pin = fit
        .pinned_firm
        .ok_or_else(|| Error::InvalidInput("debiased quadratics need an OLS fit".into()))?;
    check_connected(&panel.graph)?;
    let g = &panel.graph;
    let (n, p) = (g.n_workers(), g.n_firms());
    let nn = panel.n_obs() as f64;
    let rank = (n + p - 1) as f64;
    if nn <= rank {
        return Err(Error::Degenerate(format!("N = {nn} leaves no residual degrees of freedom (rank {rank})")));
    }
    let rss: f64 = fit.residuals.iter().map(|r| r * r).sum();
    let sigma2_hat = rss / (nn - rank);
    let sys = RidgeSystem::new(g, RidgePenalties::zero(), Some(pin), SolverOptions::default())?;
    let dfv: Vec<f64> = g.firm_degrees().iter().map(|&d| d as f64).collect();
    let s_df = sys.solve_firm(&dfv)?;
    let q: f64 = s_df.iter().zip(&dfv).map(|(a, b)| a * b).sum();
    let exact = p <= opts.dense_cap;
    let t = if exact {
        let inv = sys.firm_inverse_dense()?;
        (0..p).map(|j| dfv[j] * inv[(j, j)]).sum::<f64>()
    } else {
        let sq: Vec<f64> = dfv.iter().map(|d| d.sqrt()).collect();
        let samples: Result<Vec<f64>> = (0..opts.probes)
            .into_par_iter()
            .map(|k| {
                let mut r = rng::stream(opts.seed, tag::PROBE, k as u64);
                let z: Vec<f64> = (0..p)
                    .map(|j| if j == pin { 0.0 } else if r.random::<bool>() { sq[j] } else { -sq[j] })
                    .collect();
                let x = sys.solve_firm(&z)?;
                Ok(x.iter().zip(&z).map(|(a, b)| a * b).sum())
            })
            .collect();
        let samples = samples?;
        samples.iter().sum::<f64>() / samples.len().max(1) as f64
    };
    let pm1 = (p - 1) as f64;
    let traces = [
        (n as f64 + t - pm1 - 1.0 - q / nn) / nn,
        (t - q / nn) / nn,
        (q / nn - t + pm1) / nn,
    ];
    let plug_in = effect_moments(panel, &fit.mu_hat, &fit.phi_hat);
    let corrections = traces.map(|tr| sigma2_hat * tr);
    let corrected = [plug_in[0] - corrections[0], plug_in[1] - corrections[1], plug_in[2] - corrections[2]];
    Ok(DebiasedComponents {
        sigma2_hat,
        var_y: population_variance(&panel.y),
        plug_in,
        corrections,
        corrected,
        exact_trace: exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn single_match(y: f64) -> OutcomePanel {
        OutcomePanel::new(BipartiteGraph::from_edge_list(&[(0, 0, 1)]).unwrap(), vec![y]).unwrap()
    }

    #[test]
    fn single_match_ridge_by_hand() {
        let lam = 0.7;
        let fit = ridge_fit(&single_match(3.0), RidgePenalties::uniform(lam).unwrap()).unwrap();
        assert_relative_eq!(fit.mu_hat[0], 3.0 / (2.0 + lam), max_relative = 1e-14);
        assert_relative_eq!(fit.phi_hat[0], 3.0 / (2.0 + lam), max_relative = 1e-14);
    }

    #[test]
    fn single_match_ols_pins_firm() {
        let fit = ols_fit(&single_match(3.0)).unwrap();
        assert_eq!(fit.phi_hat[0], 0.0);
        assert_relative_eq!(fit.mu_hat[0], 3.0, max_relative = 1e-14);
    }

    #[test]
    fn zero_penalty_redirected() {
        assert!(matches!(ridge_fit(&single_match(1.0), RidgePenalties::zero()), Err(Error::ZeroPenalty)));
    }

    #[test]
    fn huge_penalty_shrinks() {
        let fit = ridge_fit(&single_match(5.0), RidgePenalties::uniform(1e12).unwrap()).unwrap();
        let norm = (fit.mu_hat[0].powi(2) + fit.phi_hat[0].powi(2)).sqrt();
        assert!(norm <= (2.0 * 25.0f64).sqrt() / 1e12);
    }

    #[test]
    fn disconnected_ols_rejected() {
        let g = BipartiteGraph::from_edge_list(&[(0, 0, 1), (1, 1, 1)]).unwrap();
        let panel = OutcomePanel::new(g, vec![1.0, 2.0]).unwrap();
        assert!(matches!(ols_fit(&panel), Err(Error::Disconnected { n_components: 2, .. })));
    }

    #[test]
    fn single_match_variance_scalar() {
        // L̃_w = 2 − 1/2 = 3/2; V(μ̂) = σ²(2/3) − σ²(4/9)(1 + 1/4)
        let s = 1.3;
        let g = BipartiteGraph::from_edge_list(&[(0, 0, 1)]).unwrap();
        let rep = insample_variance(&g, RidgePenalties::uniform(1.0).unwrap(), s, 10).unwrap();
        let expected = s * s * (2.0 / 3.0 - 4.0 / 9.0 * 1.25);
        assert_relative_eq!(rep.var_mu_diag[0], expected, max_relative = 1e-13);
        assert_relative_eq!(rep.var_phi_diag[0], expected, max_relative = 1e-13);
    }

    #[test]
    fn from_rows_sorts_into_canonical_order() {
        let panel = OutcomePanel::from_rows(2, 2, &[(1, 0, 3.0), (0, 1, 2.0), (0, 0, 1.0), (0, 1, 2.5)]).unwrap();
        let rows: Vec<_> = panel.rows().collect();
        assert_eq!(rows, vec![(0, 0, 1.0), (0, 1, 2.0), (0, 1, 2.5), (1, 0, 3.0)]);
    }
}
