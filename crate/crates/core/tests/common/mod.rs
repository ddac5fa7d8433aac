//! Dense reference computations shared by the integration tests. Everything
//! here builds explicit matrices from first principles and never calls the
//! library's solvers.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ridgefe::estimator::OutcomePanel;
use ridgefe::sbm::{NodeAssignment, SbmParams};
use ridgefe::BipartiteGraph;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random graph where each pair carries an edge with probability `density`
/// and multiplicity 1–3; every node gets at least one edge.
pub fn random_graph(r: &mut ChaCha8Rng, n: usize, p: usize, density: f64) -> BipartiteGraph {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..p {
            if r.random::<f64>() < density {
                edges.push((i, j, r.random_range(1..=3)));
            }
        }
    }
    for i in 0..n {
        edges.push((i, r.random_range(0..p), 1));
    }
    for j in 0..p {
        edges.push((r.random_range(0..n), j, 1));
    }
    BipartiteGraph::from_edges(n, p, &edges).unwrap()
}

/// Random connected graph: a random spanning tree over all nodes plus extra
/// edges.
pub fn random_connected_graph(r: &mut ChaCha8Rng, n: usize, p: usize, extra: usize) -> BipartiteGraph {
    let mut edges = Vec::new();
    // attach nodes in random order to an already-attached node of the other side
    let mut order: Vec<(bool, usize)> = (0..n).map(|i| (true, i)).chain((0..p).map(|j| (false, j))).collect();
    for k in (1..order.len()).rev() {
        let s = r.random_range(0..=k);
        order.swap(k, s);
    }
    let (mut ws, mut fs): (Vec<usize>, Vec<usize>) = (vec![], vec![]);
    // seed with one worker and one firm
    let w0 = order.iter().position(|x| x.0).unwrap();
    let f0 = order.iter().position(|x| !x.0).unwrap();
    let (w0, f0) = (order[w0].1, order[f0].1);
    edges.push((w0, f0, 1));
    ws.push(w0);
    fs.push(f0);
    for &(is_w, idx) in &order {
        if is_w {
            if idx != w0 {
                edges.push((idx, fs[r.random_range(0..fs.len())], 1));
                ws.push(idx);
            }
        } else if idx != f0 {
            edges.push((ws[r.random_range(0..ws.len())], idx, 1));
            fs.push(idx);
        }
    }
    for _ in 0..extra {
        edges.push((r.random_range(0..n), r.random_range(0..p), r.random_range(1..=2)));
    }
    BipartiteGraph::from_edges(n, p, &edges).unwrap()
}

pub fn random_panel(r: &mut ChaCha8Rng, g: &BipartiteGraph) -> OutcomePanel {
    let y = (0..g.n_obs()).map(|_| r.random::<f64>() * 4.0 - 2.0).collect();
    OutcomePanel::new(g.clone(), y).unwrap()
}

pub fn dense_b(g: &BipartiteGraph) -> DMatrix<f64> {
    DMatrix::from_fn(g.n_workers(), g.n_firms(), |i, j| {
        g.worker_edges(i).filter(|&(f, _)| f == j).map(|(_, d)| d as f64).sum()
    })
}

/// Full `(n+p)` normal equations `(XᵀX + Λ)β = XᵀY`, dense Cholesky.
pub fn dense_ridge(panel: &OutcomePanel, lw: f64, lf: f64) -> (Vec<f64>, Vec<f64>) {
    let g = &panel.graph;
    let (n, p) = (g.n_workers(), g.n_firms());
    let b = dense_b(g);
    let mut a = DMatrix::zeros(n + p, n + p);
    let mut rhs = DVector::zeros(n + p);
    for i in 0..n {
        a[(i, i)] = b.row(i).sum() + lw;
    }
    for j in 0..p {
        a[(n + j, n + j)] = b.column(j).sum() + lf;
    }
    for i in 0..n {
        for j in 0..p {
            a[(i, n + j)] = b[(i, j)];
            a[(n + j, i)] = b[(i, j)];
        }
    }
    for (i, j, y) in panel.rows() {
        rhs[i] += y;
        rhs[n + j] += y;
    }
    let sol = a.cholesky().expect("SPD normal equations").solve(&rhs);
    (sol.rows(0, n).iter().copied().collect(), sol.rows(n, p).iter().copied().collect())
}

/// Ridge bias and variance formulas evaluated with dense matrices for an
/// arbitrary nonnegative weight matrix `b` (realized counts or expected
/// probabilities).
pub struct DenseMoments {
    pub lt_w_inv: DMatrix<f64>,
    pub lt_f_inv: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub dw: DVector<f64>,
    pub df: DVector<f64>,
    pub lw: f64,
    pub lf: f64,
}

impl DenseMoments {
    pub fn new(b: DMatrix<f64>, lw: f64, lf: f64) -> Self {
        let (n, p) = (b.nrows(), b.ncols());
        let dw = DVector::from_fn(n, |i, _| b.row(i).sum() + lw);
        let df = DVector::from_fn(p, |j, _| b.column(j).sum() + lf);
        let df_inv = DMatrix::from_diagonal(&df.map(|v| 1.0 / v));
        let dw_inv = DMatrix::from_diagonal(&dw.map(|v| 1.0 / v));
        let lt_w = DMatrix::from_diagonal(&dw) - &b * &df_inv * b.transpose();
        let lt_f = DMatrix::from_diagonal(&df) - b.transpose() * &dw_inv * &b;
        Self {
            lt_w_inv: lt_w.try_inverse().unwrap(),
            lt_f_inv: lt_f.try_inverse().unwrap(),
            b,
            dw,
            df,
            lw,
            lf,
        }
    }

    pub fn bias(&self, mu: &[f64], phi: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let mu = DVector::from_column_slice(mu);
        let phi = DVector::from_column_slice(phi);
        let phi_s = phi.component_div(&self.df);
        let mu_s = mu.component_div(&self.dw);
        let rw = -&mu * self.lw + (&self.b * phi_s) * self.lf;
        let rf = -&phi * self.lf + (self.b.transpose() * mu_s) * self.lw;
        (&self.lt_w_inv * rw, &self.lt_f_inv * rf)
    }

    /// `V_w`, `V_f` for random effects; `σ_w = σ_f = 0` gives the
    /// fixed-effect variances.
    pub fn variance(&self, s: f64, sw: f64, sf: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let (lw, lf, s2) = (self.lw, self.lf, s * s);
        let aw = lw * lw * sw * sw - lw * s2;
        let af = lf * lf * sf * sf - lf * s2;
        let bdf = &self.b * DMatrix::from_diagonal(&self.df.map(|v| 1.0 / v));
        let bdw = self.b.transpose() * DMatrix::from_diagonal(&self.dw.map(|v| 1.0 / v));
        let n = self.b.nrows();
        let p = self.b.ncols();
        let mid_w = DMatrix::identity(n, n) * aw + &bdf * bdf.transpose() * af;
        let mid_f = DMatrix::identity(p, p) * af + &bdw * bdw.transpose() * aw;
        (
            &self.lt_w_inv * s2 + &self.lt_w_inv * mid_w * &self.lt_w_inv,
            &self.lt_f_inv * s2 + &self.lt_f_inv * mid_f * &self.lt_f_inv,
        )
    }
}

/// `p_ij = θ_j C(k_i, ℓ_j) / n_{k_i}` from the assignment, dense.
pub fn dense_expected(a: &NodeAssignment, c: &DMatrix<f64>) -> DMatrix<f64> {
    let counts: Vec<usize> = (0..a.k).map(|k| a.worker_types.iter().filter(|&&t| t == k).count()).collect();
    DMatrix::from_fn(a.worker_types.len(), a.firm_types.len(), |i, j| {
        let k = a.worker_types[i];
        a.theta[j] * c[(k, a.firm_types[j])] / counts[k] as f64
    })
}

pub fn sym_spectral_norm(m: &DMatrix<f64>) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigenvalues().iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Small block-model parameters with `k` groups and symmetric affinity.
pub fn small_sbm(n0: usize, p0: usize, k: usize, diag: f64, off: f64, seed: u64) -> SbmParams {
    SbmParams {
        n0,
        p0,
        k,
        pi_w: vec![1.0 / k as f64; k],
        pi_f: vec![1.0 / k as f64; k],
        affinity: (0..k).map(|a| (0..k).map(|b| if a == b { diag } else { off }).collect()).collect(),
        theta_pareto_alpha: 2.0,
        theta_min: 1.0,
        seed,
    }
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}
