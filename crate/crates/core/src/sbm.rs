//! Degree-corrected stochastic block model for bipartite worker–firm
//! networks, and its expected ("deterministic-equivalent") network.
//!
//! Group types are 0-based internally (`0..K`); files use 1-based labels.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{BipartiteGraph, RidgePenalties, Side};
use crate::linalg::{DiagPlusLowRank, LinearOperator};
use crate::rng::{self, tag};

/// Fraction of total edge-probability mass that clipping may remove before
/// sampling is refused.
pub const MAX_CLIPPED_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbmParams {
    pub n0: usize,
    pub p0: usize,
    pub k: usize,
    pub pi_w: Vec<f64>,
    pub pi_f: Vec<f64>,
    /// K × K affinity matrix, row = worker group, column = firm group.
    pub affinity: Vec<Vec<f64>>,
    #[serde(default = "default_alpha")]
    pub theta_pareto_alpha: f64,
    #[serde(default = "default_theta_min")]
    pub theta_min: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_alpha() -> f64 {
    2.0
}
fn default_theta_min() -> f64 {
    1.0
}

/// `C = c (p0/K) [I_K + δ (J_K − I_K)]`.
pub fn paper_affinity(c: f64, k: usize, p0: usize, delta: f64) -> Result<Vec<Vec<f64>>> {
    if !(c > 0.0) || !(0.0..=1.0).contains(&delta) || k == 0 {
        return Err(Error::InvalidInput(format!("need c > 0, 0 <= delta <= 1, K >= 1 (c={c}, delta={delta}, K={k})")));
    }
    let scale = c * p0 as f64 / k as f64;
    Ok((0..k)
        .map(|a| (0..k).map(|b| if a == b { scale } else { scale * delta }).collect())
        .collect())
}

impl SbmParams {
    /// Simulation design with `n0 = 3 p0`, `K = 5`, `δ = 0.1`, uniform type
    /// probabilities and Pareto(2, 1) firm weights.
    pub fn simulation_design(c: f64, p0: usize, seed: u64) -> Self {
        let k = 5;
        Self {
            n0: 3 * p0,
            p0,
            k,
            pi_w: vec![1.0 / k as f64; k],
            pi_f: vec![1.0 / k as f64; k],
            affinity: paper_affinity(c, k, p0, 0.1).expect("valid design"),
            theta_pareto_alpha: 2.0,
            theta_min: 1.0,
            seed,
        }
    }

    /// `c = 1` column of the simulated-network table (`p0 = 30000`).
    pub fn preset_c1(seed: u64) -> Self {
        Self::simulation_design(1.0, 30_000, seed)
    }

    /// `c = 2` column of the simulated-network table (`p0 = 4500`).
    pub fn preset_c2(seed: u64) -> Self {
        Self::simulation_design(2.0, 4_500, seed)
    }

    /// Small configuration for bound verification: 600 workers, 200 firms,
    /// three groups.
    pub fn desk(n0: usize, p0: usize, seed: u64) -> Self {
        let k = 3;
        Self {
            n0,
            p0,
            k,
            pi_w: vec![1.0 / k as f64; k],
            pi_f: vec![1.0 / k as f64; k],
            affinity: paper_affinity(2.0, k, p0, 0.1).expect("valid design"),
            theta_pareto_alpha: 2.0,
            theta_min: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.k;
        if k == 0 {
            return Err(Error::InvalidInput("K must be >= 1".into()));
        }
        for (name, pi) in [("pi_w", &self.pi_w), ("pi_f", &self.pi_f)] {
            if pi.len() != k {
                return Err(Error::InvalidInput(format!("{name} has length {} but K = {k}", pi.len())));
            }
            if pi.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::InvalidInput(format!("{name} has negative or non-finite entries")));
            }
            let s: f64 = pi.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidInput(format!("{name} sums to {s}, expected 1")));
            }
        }
        if self.affinity.len() != k || self.affinity.iter().any(|r| r.len() != k) {
            return Err(Error::InvalidInput("affinity must be K x K".into()));
        }
        if self.affinity.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("affinity entries must be finite and >= 0".into()));
        }
        if !(self.theta_pareto_alpha > 0.0) || !(self.theta_min > 0.0) || !self.theta_min.is_finite() {
            return Err(Error::InvalidInput("theta Pareto parameters must be positive".into()));
        }
        Ok(())
    }

    pub fn affinity_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k, self.k, |a, b| self.affinity[a][b])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeAssignment {
    pub k: usize,
    pub worker_types: Vec<usize>,
    pub firm_types: Vec<usize>,
    pub theta: Vec<f64>,
    pub group_counts: Vec<usize>,
    pub firm_group_counts: Vec<usize>,
}

impl NodeAssignment {
    /// Builds an assignment from explicit types and raw (unnormalized) firm
    /// weights; weights are renormalized to sum to one within each group.
    pub fn new(k: usize, worker_types: Vec<usize>, firm_types: Vec<usize>, raw_theta: Vec<f64>) -> Result<Self> {
        if raw_theta.len() != firm_types.len() {
            return Err(Error::InvalidInput("theta and firm types differ in length".into()));
        }
        if worker_types.iter().chain(&firm_types).any(|t| *t >= k) {
            return Err(Error::InvalidInput(format!("type out of range for K = {k}")));
        }
        if raw_theta.iter().any(|t| !(*t > 0.0) || !t.is_finite()) {
            return Err(Error::InvalidInput("theta must be positive and finite".into()));
        }
        let mut group_counts = vec![0usize; k];
        for &t in &worker_types {
            group_counts[t] += 1;
        }
        let mut firm_group_counts = vec![0usize; k];
        let mut sums = vec![0.0; k];
        for (&t, &th) in firm_types.iter().zip(&raw_theta) {
            firm_group_counts[t] += 1;
            sums[t] += th;
        }
        let theta = firm_types.iter().zip(&raw_theta).map(|(&t, &th)| th / sums[t]).collect();
        Ok(Self { k, worker_types, firm_types, theta, group_counts, firm_group_counts })
    }

    pub fn n_workers(&self) -> usize {
        self.worker_types.len()
    }
    pub fn n_firms(&self) -> usize {
        self.firm_types.len()
    }

    pub fn empty_worker_groups(&self) -> Vec<usize> {
        (0..self.k).filter(|&g| self.group_counts[g] == 0).collect()
    }

    pub fn empty_firm_groups(&self) -> Vec<usize> {
        (0..self.k).filter(|&g| self.firm_group_counts[g] == 0).collect()
    }

    /// Workers of each type, in index order.
    pub fn workers_by_type(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (i, &t) in self.worker_types.iter().enumerate() {
            out[t].push(i);
        }
        out
    }

    pub fn firms_by_type(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k];
        for (j, &t) in self.firm_types.iter().enumerate() {
            out[t].push(j);
        }
        out
    }

    /// Restriction to the nodes kept by a component selection. Firm weights
    /// are kept as drawn (not renormalized).
    pub fn restrict(&self, mapping: &crate::graph::NodeMapping) -> NodeAssignment {
        let worker_types: Vec<usize> = mapping.workers.iter().map(|&i| self.worker_types[i]).collect();
        let firm_types: Vec<usize> = mapping.firms.iter().map(|&j| self.firm_types[j]).collect();
        let theta = mapping.firms.iter().map(|&j| self.theta[j]).collect();
        let mut group_counts = vec![0; self.k];
        worker_types.iter().for_each(|&t| group_counts[t] += 1);
        let mut firm_group_counts = vec![0; self.k];
        firm_types.iter().for_each(|&t| firm_group_counts[t] += 1);
        NodeAssignment { k: self.k, worker_types, firm_types, theta, group_counts, firm_group_counts }
    }
}

fn categorical<R: Rng>(rng: &mut R, pi: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (idx, p) in pi.iter().enumerate() {
        acc += p;
        if u < acc {
            return idx;
        }
    }
    // round-off: last group with positive probability
    pi.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// Draws worker and firm types i.i.d. from `π_w`, `π_f` and Pareto firm
/// weights, each firm's weight from its own keyed stream.
pub fn draw_assignment(params: &SbmParams) -> Result<NodeAssignment> {
    params.validate()?;
    let mut wr = rng::stream(params.seed, tag::WORKER_TYPE, 0);
    let worker_types = (0..params.n0).map(|_| categorical(&mut wr, &params.pi_w)).collect();
    let mut fr = rng::stream(params.seed, tag::FIRM_TYPE, 0);
    let firm_types = (0..params.p0).map(|_| categorical(&mut fr, &params.pi_f)).collect();
    let alpha = params.theta_pareto_alpha;
    let raw_theta = (0..params.p0)
        .map(|j| {
            if alpha.is_infinite() {
                params.theta_min
            } else {
                let mut r = rng::stream(params.seed, tag::THETA, j as u64);
                let u: f64 = r.random();
                params.theta_min * (1.0 - u).powf(-1.0 / alpha)
            }
        })
        .collect();
    NodeAssignment::new(params.k, worker_types, firm_types, raw_theta)
}

/// Lazy accessor for `p_ij = θ_j C(k_i, ℓ_j) / n_{k_i}`.
pub struct EdgeProbabilities<'a> {
    assignment: &'a NodeAssignment,
    affinity: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ClippingSummary {
    pub clipped_pairs: u64,
    pub clipped_mass: f64,
    pub total_mass: f64,
}

impl<'a> EdgeProbabilities<'a> {
    pub fn new(assignment: &'a NodeAssignment, affinity: DMatrix<f64>) -> Result<Self> {
        if affinity.nrows() != assignment.k || affinity.ncols() != assignment.k {
            return Err(Error::InvalidInput("affinity does not match K".into()));
        }
        Ok(Self { assignment, affinity })
    }

    /// Unclipped probability.
    pub fn raw(&self, i: usize, j: usize) -> f64 {
        let a = self.assignment;
        let k = a.worker_types[i];
        a.theta[j] * self.affinity[(k, a.firm_types[j])] / a.group_counts[k] as f64
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.raw(i, j).min(1.0)
    }

    pub fn clipping(&self) -> ClippingSummary {
        let a = self.assignment;
        let mut s = ClippingSummary::default();
        for j in 0..a.n_firms() {
            for k in 0..a.k {
                let nk = a.group_counts[k];
                if nk == 0 {
                    continue;
                }
                let q = a.theta[j] * self.affinity[(k, a.firm_types[j])] / nk as f64;
                s.total_mass += q * nk as f64;
                if q > 1.0 {
                    s.clipped_pairs += nk as u64;
                    s.clipped_mass += (q - 1.0) * nk as f64;
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct SampledNetwork {
    pub graph: BipartiteGraph,
    pub clipping: ClippingSummary,
}

/// Samples `d_ij ~ Bernoulli(p_ij)` independently over all pairs.
///
/// Within a (worker type, firm) column segment the probability is constant,
/// so successes are located by geometric skipping. Each (k, ℓ) block has its
/// own stream keyed by `(seed, draw)`, which makes the output independent of
/// scheduling.
pub fn sample_edges(assignment: &NodeAssignment, affinity: &DMatrix<f64>, seed: u64, draw: u64) -> Result<SampledNetwork> {
    let probs = EdgeProbabilities::new(assignment, affinity.clone())?;
    let clipping = probs.clipping();
    if clipping.clipped_mass > MAX_CLIPPED_FRACTION * clipping.total_mass {
        return Err(Error::ExcessiveClipping { clipped: clipping.clipped_mass, total: clipping.total_mass });
    }
    let k = assignment.k;
    let workers = assignment.workers_by_type();
    let firms = assignment.firms_by_type();
    let draw_seed = rng::derive_seed(seed, draw);
    let blocks: Vec<(usize, usize)> = (0..k).flat_map(|a| (0..k).map(move |b| (a, b))).collect();
    let per_block: Vec<Vec<(usize, usize, u64)>> = blocks
        .par_iter()
        .map(|&(wk, fl)| {
            let mut out = Vec::new();
            let members = &workers[wk];
            let nk = members.len();
            let c = affinity[(wk, fl)];
            if nk == 0 || c <= 0.0 {
                return out;
            }
            let mut r = rng::stream(draw_seed, tag::EDGES, (wk * k + fl) as u64);
            for &j in &firms[fl] {
                let q = (assignment.theta[j] * c / nk as f64).min(1.0);
                if q <= 0.0 {
                    continue;
                }
                if q >= 1.0 {
                    out.extend(members.iter().map(|&i| (j, i, 1)));
                    continue;
                }
                let log_q = (-q).ln_1p();
                let mut pos: usize = 0;
                loop {
                    let u: f64 = 1.0 - r.random::<f64>();
                    let skip = (u.ln() / log_q).floor();
                    if skip >= (nk - pos) as f64 {
                        break;
                    }
                    pos += skip as usize;
                    out.push((j, members[pos], 1));
                    pos += 1;
                    if pos >= nk {
                        break;
                    }
                }
            }
            out
        })
        .collect();
    let mut merged: Vec<(usize, usize, u64)> = per_block.into_iter().flatten().collect();
    merged.sort_unstable();
    let graph = BipartiteGraph::from_sorted_unique(assignment.n_workers(), assignment.n_firms(), &merged);
    Ok(SampledNetwork { graph, clipping })
}

/// Draws an assignment and one network from `params`.
pub fn sample_network(params: &SbmParams) -> Result<(NodeAssignment, SampledNetwork)> {
    let assignment = draw_assignment(params)?;
    let net = sample_edges(&assignment, &params.affinity_matrix(), params.seed, 0)?;
    Ok((assignment, net))
}

/// The expected network `𝔅 = E B` and its regularized normalizations, held in
/// rank-K factored form.
///
/// Groups with no members on either side are dropped from all per-group sums,
/// so expected degrees are always the row and column sums of `𝔅`.
#[derive(Debug, Clone)]
pub struct ExpectedNetwork {
    pub assignment: NodeAssignment,
    pub affinity: DMatrix<f64>,
    pub penalties: RidgePenalties,
    /// `C` with rows/columns of empty groups zeroed.
    effective: DMatrix<f64>,
    n_k: Vec<f64>,
    /// `C(k,·)/n_k` per worker group.
    group_worker_degree: Vec<f64>,
    expected_worker_degrees: Vec<f64>,
    expected_firm_degrees: Vec<f64>,
    pub normalized_affinity: DMatrix<f64>,
    pub omega: Vec<f64>,
    pub phi: Vec<f64>,
}

impl ExpectedNetwork {
    pub fn new(assignment: &NodeAssignment, affinity: &DMatrix<f64>, penalties: RidgePenalties) -> Result<Self> {
        let k = assignment.k;
        if affinity.nrows() != k || affinity.ncols() != k {
            return Err(Error::InvalidInput("affinity does not match K".into()));
        }
        let effective = DMatrix::from_fn(k, k, |a, b| {
            if assignment.group_counts[a] > 0 && assignment.firm_group_counts[b] > 0 {
                affinity[(a, b)]
            } else {
                0.0
            }
        });
        let n_k: Vec<f64> = assignment.group_counts.iter().map(|&c| c as f64).collect();
        let row_sum: Vec<f64> = (0..k).map(|a| effective.row(a).sum()).collect();
        let col_sum: Vec<f64> = (0..k).map(|b| effective.column(b).sum()).collect();
        let group_worker_degree: Vec<f64> =
            (0..k).map(|a| if n_k[a] > 0.0 { row_sum[a] / n_k[a] } else { 0.0 }).collect();
        let expected_worker_degrees: Vec<f64> =
            assignment.worker_types.iter().map(|&t| group_worker_degree[t]).collect();
        let expected_firm_degrees: Vec<f64> = assignment
            .firm_types
            .iter()
            .zip(&assignment.theta)
            .map(|(&t, &th)| th * col_sum[t])
            .collect();
        for (i, d) in expected_worker_degrees.iter().enumerate() {
            if d + penalties.lambda_w <= 0.0 {
                return Err(Error::ZeroDegree { kind: "expected worker", index: i });
            }
        }
        for (j, d) in expected_firm_degrees.iter().enumerate() {
            if d + penalties.lambda_f <= 0.0 {
                return Err(Error::ZeroDegree { kind: "expected firm", index: j });
            }
        }
        let normalized_affinity = DMatrix::from_fn(k, k, |a, b| {
            let den = (row_sum[a] * col_sum[b]).sqrt();
            if den > 0.0 {
                effective[(a, b)] / den
            } else {
                0.0
            }
        });
        let omega = (0..k)
            .map(|a| {
                if n_k[a] > 0.0 {
                    (row_sum[a] / (group_worker_degree[a] + penalties.lambda_w)).sqrt() / n_k[a]
                } else {
                    0.0
                }
            })
            .collect();
        let phi = assignment
            .firm_types
            .iter()
            .zip(&assignment.theta)
            .map(|(&t, &th)| th * (col_sum[t] / (th * col_sum[t] + penalties.lambda_f)).sqrt())
            .collect();
        Ok(Self {
            assignment: assignment.clone(),
            affinity: affinity.clone(),
            penalties,
            effective,
            n_k,
            group_worker_degree,
            expected_worker_degrees,
            expected_firm_degrees,
            normalized_affinity,
            omega,
            phi,
        })
    }

    pub fn with_penalties(&self, penalties: RidgePenalties) -> Result<Self> {
        Self::new(&self.assignment, &self.affinity, penalties)
    }

    pub fn n_workers(&self) -> usize {
        self.assignment.n_workers()
    }
    pub fn n_firms(&self) -> usize {
        self.assignment.n_firms()
    }
    pub fn k(&self) -> usize {
        self.assignment.k
    }

    /// `C(k_i,·)/n_{k_i}`.
    pub fn expected_worker_degrees(&self) -> &[f64] {
        &self.expected_worker_degrees
    }
    /// `θ_j C(·,ℓ_j)`.
    pub fn expected_firm_degrees(&self) -> &[f64] {
        &self.expected_firm_degrees
    }

    /// (min, max) expected worker degree over nonempty groups.
    pub fn worker_degree_range(&self) -> (f64, f64) {
        min_max(self.expected_worker_degrees.iter().copied())
    }
    pub fn firm_degree_range(&self) -> (f64, f64) {
        min_max(self.expected_firm_degrees.iter().copied())
    }

    pub fn probability(&self, i: usize, j: usize) -> f64 {
        let a = &self.assignment;
        let k = a.worker_types[i];
        a.theta[j] * self.effective[(k, a.firm_types[j])] / self.n_k[k]
    }

    pub fn dense_expected_adjacency(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_workers(), self.n_firms(), |i, j| self.probability(i, j))
    }

    /// `(𝔈_λ)_ij = ω_{k_i} C̃(k_i, ℓ_j) φ_j`.
    pub fn normalized_entry(&self, i: usize, j: usize) -> f64 {
        let a = &self.assignment;
        let (k, l) = (a.worker_types[i], a.firm_types[j]);
        self.omega[k] * self.normalized_affinity[(k, l)] * self.phi[j]
    }

    /// `𝒜_{f,λ}` entry from its explicit sum over worker groups.
    pub fn firm_adjacency_entry(&self, j: usize, j2: usize) -> f64 {
        let a = &self.assignment;
        let (l, l2) = (a.firm_types[j], a.firm_types[j2]);
        let s: f64 = (0..self.k())
            .map(|k| {
                self.n_k[k] * self.normalized_affinity[(k, l)] * self.omega[k].powi(2) * self.normalized_affinity[(k, l2)]
            })
            .sum();
        self.phi[j] * s * self.phi[j2]
    }

    /// `𝔅 y` for `y` indexed by firms.
    pub fn mul_b(&self, y: &[f64]) -> Vec<f64> {
        let a = &self.assignment;
        let k = self.k();
        let mut s = vec![0.0; k];
        for (j, &l) in a.firm_types.iter().enumerate() {
            s[l] += a.theta[j] * y[j];
        }
        let t: Vec<f64> = (0..k)
            .map(|g| if self.n_k[g] > 0.0 { (0..k).map(|l| self.effective[(g, l)] * s[l]).sum::<f64>() / self.n_k[g] } else { 0.0 })
            .collect();
        a.worker_types.iter().map(|&g| t[g]).collect()
    }

    /// `𝔅ᵀ x` for `x` indexed by workers.
    pub fn mul_bt(&self, x: &[f64]) -> Vec<f64> {
        let a = &self.assignment;
        let k = self.k();
        let mut s = vec![0.0; k];
        for (i, &g) in a.worker_types.iter().enumerate() {
            s[g] += x[i];
        }
        let s: Vec<f64> = (0..k).map(|g| if self.n_k[g] > 0.0 { s[g] / self.n_k[g] } else { 0.0 }).collect();
        let t: Vec<f64> = (0..k).map(|l| (0..k).map(|g| self.effective[(g, l)] * s[g]).sum()).collect();
        a.firm_types.iter().zip(&a.theta).map(|(&l, &th)| th * t[l]).collect()
    }

    fn worker_factor(&self) -> DMatrix<f64> {
        let a = &self.assignment;
        let mut p = DMatrix::zeros(self.n_workers(), self.k());
        for (i, &g) in a.worker_types.iter().enumerate() {
            p[(i, g)] = self.omega[g];
        }
        p
    }

    fn firm_factor(&self) -> DMatrix<f64> {
        let a = &self.assignment;
        let mut q = DMatrix::zeros(self.n_firms(), self.k());
        for (j, &l) in a.firm_types.iter().enumerate() {
            q[(j, l)] = self.phi[j];
        }
        q
    }

    /// Thin factor `U` and core `M` with `𝒜_side = U M Uᵀ`.
    fn adjacency_factors(&self, side: Side) -> (DMatrix<f64>, DMatrix<f64>) {
        let k = self.k();
        let ct = &self.normalized_affinity;
        match side {
            Side::Worker => {
                let mut g = vec![0.0; k];
                for (j, &l) in self.assignment.firm_types.iter().enumerate() {
                    g[l] += self.phi[j].powi(2);
                }
                let gm = DMatrix::from_diagonal(&DVector::from_vec(g));
                (self.worker_factor(), ct * gm * ct.transpose())
            }
            Side::Firm => {
                let g = DVector::from_fn(k, |a, _| self.n_k[a] * self.omega[a].powi(2));
                let gm = DMatrix::from_diagonal(&g);
                (self.firm_factor(), ct.transpose() * gm * ct)
            }
        }
    }

    /// `𝒜_{side,λ}` (`𝔈𝔈ᵀ` or `𝔈ᵀ𝔈`) as a rank-K operator.
    pub fn adjacency(&self, side: Side) -> DiagPlusLowRank {
        let (u, m) = self.adjacency_factors(side);
        DiagPlusLowRank::new(DVector::zeros(u.nrows()), u, m)
    }

    /// `𝔏_{side,λ} = I − 𝒜_{side,λ}`.
    pub fn laplacian(&self, side: Side) -> DiagPlusLowRank {
        let (u, m) = self.adjacency_factors(side);
        DiagPlusLowRank::new(DVector::from_element(u.nrows(), 1.0), u, -m)
    }

    /// `𝔏^{-1} = I + U (I_K − VᵀU)^{-1} Vᵀ` with `𝒜 = U Vᵀ`, `V = U M`.
    pub fn laplacian_inverse(&self, side: Side) -> Result<DiagPlusLowRank> {
        let (u, m) = self.adjacency_factors(side);
        let k = m.nrows();
        let gram = u.tr_mul(&u);
        let inner = DMatrix::identity(k, k) - &m * &gram;
        let inv = inner.clone().lu().try_inverse().ok_or_else(|| {
            Error::Singular(format!("I_K - VᵀU is singular (side {side:?}, core norm {:.3e})", m.norm()))
        })?;
        let mut core = inv * &m;
        core = (&core + core.transpose()) * 0.5;
        Ok(DiagPlusLowRank::new(DVector::from_element(u.nrows(), 1.0), u, core))
    }

    /// `𝔏^{-1} x` in O((n + p) K + K³).
    pub fn laplacian_inverse_apply(&self, side: Side, x: &[f64]) -> Result<Vec<f64>> {
        let inv = self.laplacian_inverse(side)?;
        Ok(LinearOperator::apply_vec(&inv, x))
    }

    /// Regularized expected degrees `𝔇_{side,λ}`.
    pub fn regularized_degrees(&self, side: Side) -> DVector<f64> {
        match side {
            Side::Worker => DVector::from_iterator(
                self.n_workers(),
                self.expected_worker_degrees.iter().map(|d| d + self.penalties.lambda_w),
            ),
            Side::Firm => DVector::from_iterator(
                self.n_firms(),
                self.expected_firm_degrees.iter().map(|d| d + self.penalties.lambda_f),
            ),
        }
    }

    /// `𝔏̃ = 𝔇^{1/2} 𝔏 𝔇^{1/2}`.
    pub fn unnormalized_laplacian(&self, side: Side) -> DiagPlusLowRank {
        let d = self.regularized_degrees(side);
        let l = self.laplacian(side);
        scale_symmetric(&l, &d.map(f64::sqrt))
    }

    /// `𝔏̃^{-1} = 𝔇^{-1/2} 𝔏^{-1} 𝔇^{-1/2}`.
    pub fn unnormalized_laplacian_inverse(&self, side: Side) -> Result<DiagPlusLowRank> {
        let d = self.regularized_degrees(side);
        let inv = self.laplacian_inverse(side)?;
        Ok(scale_symmetric(&inv, &d.map(|v| 1.0 / v.sqrt())))
    }

    /// `𝔅 𝔇_{f,λ}^{-2} 𝔅ᵀ` (worker side) or `𝔅ᵀ 𝔇_{w,λ}^{-2} 𝔅` (firm side).
    pub fn cross_gram(&self, side: Side) -> DiagPlusLowRank {
        let a = &self.assignment;
        let k = self.k();
        let c = &self.effective;
        match side {
            Side::Worker => {
                let mut g = vec![0.0; k];
                for (j, &l) in a.firm_types.iter().enumerate() {
                    g[l] += (a.theta[j] / (self.expected_firm_degrees[j] + self.penalties.lambda_f)).powi(2);
                }
                let core = c * DMatrix::from_diagonal(&DVector::from_vec(g)) * c.transpose();
                let mut u = DMatrix::zeros(self.n_workers(), k);
                for (i, &t) in a.worker_types.iter().enumerate() {
                    u[(i, t)] = 1.0 / self.n_k[t];
                }
                DiagPlusLowRank::new(DVector::zeros(self.n_workers()), u, core)
            }
            Side::Firm => {
                let g = DVector::from_fn(k, |t, _| {
                    if self.n_k[t] > 0.0 {
                        1.0 / (self.n_k[t] * (self.group_worker_degree[t] + self.penalties.lambda_w).powi(2))
                    } else {
                        0.0
                    }
                });
                let core = c.transpose() * DMatrix::from_diagonal(&g) * c;
                let mut u = DMatrix::zeros(self.n_firms(), k);
                for (j, &l) in a.firm_types.iter().enumerate() {
                    u[(j, l)] = a.theta[j];
                }
                DiagPlusLowRank::new(DVector::zeros(self.n_firms()), u, core)
            }
        }
    }

    /// Matrix-free `𝔈_λ`.
    pub fn normalized_adjacency(&self) -> ExpectedAdjacency<'_> {
        ExpectedAdjacency { en: self }
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// `diag(s) A diag(s)`.
fn scale_symmetric(a: &DiagPlusLowRank, s: &DVector<f64>) -> DiagPlusLowRank {
    let diag = DVector::from_fn(a.dim(), |i, _| a.diag[i] * s[i] * s[i]);
    let factor = DMatrix::from_fn(a.dim(), a.rank(), |i, j| s[i] * a.factor[(i, j)]);
    DiagPlusLowRank::new(diag, factor, a.core.clone())
}

pub struct ExpectedAdjacency<'a> {
    en: &'a ExpectedNetwork,
}

impl LinearOperator for ExpectedAdjacency<'_> {
    fn nrows(&self) -> usize {
        self.en.n_workers()
    }
    fn ncols(&self) -> usize {
        self.en.n_firms()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let en = self.en;
        let k = en.k();
        let mut s = vec![0.0; k];
        for (j, &l) in en.assignment.firm_types.iter().enumerate() {
            s[l] += en.phi[j] * x[j];
        }
        let t: Vec<f64> = (0..k).map(|g| (0..k).map(|l| en.normalized_affinity[(g, l)] * s[l]).sum()).collect();
        for (i, &g) in en.assignment.worker_types.iter().enumerate() {
            y[i] = en.omega[g] * t[g];
        }
    }
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        let en = self.en;
        let k = en.k();
        let mut s = vec![0.0; k];
        for (i, &g) in en.assignment.worker_types.iter().enumerate() {
            s[g] += en.omega[g] * x[i];
        }
        let t: Vec<f64> = (0..k).map(|l| (0..k).map(|g| en.normalized_affinity[(g, l)] * s[g]).sum()).collect();
        for (j, &l) in en.assignment.firm_types.iter().enumerate() {
            y[j] = en.phi[j] * t[l];
        }
    }
}
