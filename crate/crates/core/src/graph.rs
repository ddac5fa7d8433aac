//! Sparse bipartite worker–firm match graphs.
//!
//! Edges are kept in compressed-column form over firms (sorted by firm, then
//! worker) together with a compressed-row mirror over workers, so that both
//! `B x` and `Bᵀ y` are single passes over the nonzeros.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::LinearOperator;

/// Nonnegative ridge penalties on the worker and firm effects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgePenalties {
    pub lambda_w: f64,
    pub lambda_f: f64,
}

impl RidgePenalties {
    pub fn new(lambda_w: f64, lambda_f: f64) -> Result<Self> {
        for (name, v) in [("lambda_w", lambda_w), ("lambda_f", lambda_f)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(Self { lambda_w, lambda_f })
    }

    pub fn uniform(lambda: f64) -> Result<Self> {
        Self::new(lambda, lambda)
    }

    pub const fn zero() -> Self {
        Self { lambda_w: 0.0, lambda_f: 0.0 }
    }

    pub fn is_positive(&self) -> bool {
        self.lambda_w > 0.0 && self.lambda_f > 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Worker,
    Firm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BipartiteGraph {
    n_workers: usize,
    n_firms: usize,
    // compressed columns (firms)
    col_ptr: Vec<usize>,
    col_rows: Vec<usize>,
    col_vals: Vec<u32>,
    // compressed rows (workers)
    row_ptr: Vec<usize>,
    row_cols: Vec<usize>,
    row_vals: Vec<u32>,
    worker_degrees: Vec<u64>,
    firm_degrees: Vec<u64>,
    n_obs: u64,
}

impl BipartiteGraph {
    /// Builds a graph on `n_workers × n_firms` nodes. Duplicate pairs are
    /// summed; zero multiplicities are dropped.
    pub fn from_edges(n_workers: usize, n_firms: usize, edges: &[(usize, usize, i64)]) -> Result<Self> {
        let mut triplets = Vec::with_capacity(edges.len());
        for &(i, j, d) in edges {
            if i >= n_workers {
                return Err(Error::IndexOutOfRange { kind: "worker", index: i, size: n_workers });
            }
            if j >= n_firms {
                return Err(Error::IndexOutOfRange { kind: "firm", index: j, size: n_firms });
            }
            if d < 0 {
                return Err(Error::NegativeMultiplicity { worker: i, firm: j, value: d });
            }
            if d > 0 {
                triplets.push((j, i, d as u64));
            }
        }
        triplets.sort_unstable();
        let mut merged: Vec<(usize, usize, u64)> = Vec::with_capacity(triplets.len());
        for (j, i, d) in triplets {
            match merged.last_mut() {
                Some(last) if last.0 == j && last.1 == i => last.2 += d,
                _ => merged.push((j, i, d)),
            }
        }
        if merged.iter().any(|t| t.2 > u32::MAX as u64) {
            return Err(Error::InvalidInput("edge multiplicity overflows u32".into()));
        }
        Ok(Self::from_sorted_unique(n_workers, n_firms, &merged))
    }

    /// Builds a graph whose node counts are inferred from the largest indices.
    pub fn from_edge_list(edges: &[(usize, usize, i64)]) -> Result<Self> {
        let n = edges.iter().map(|e| e.0 + 1).max().unwrap_or(0);
        let p = edges.iter().map(|e| e.1 + 1).max().unwrap_or(0);
        Self::from_edges(n, p, edges)
    }

    /// `merged` must be sorted by (firm, worker) with unique positive entries.
    pub(crate) fn from_sorted_unique(n_workers: usize, n_firms: usize, merged: &[(usize, usize, u64)]) -> Self {
        let nnz = merged.len();
        let mut col_ptr = vec![0usize; n_firms + 1];
        let mut col_rows = Vec::with_capacity(nnz);
        let mut col_vals = Vec::with_capacity(nnz);
        let mut worker_degrees = vec![0u64; n_workers];
        let mut firm_degrees = vec![0u64; n_firms];
        let mut row_counts = vec![0usize; n_workers];
        for &(j, i, d) in merged {
            col_ptr[j + 1] += 1;
            col_rows.push(i);
            col_vals.push(d as u32);
            worker_degrees[i] += d;
            firm_degrees[j] += d;
            row_counts[i] += 1;
        }
        for j in 0..n_firms {
            col_ptr[j + 1] += col_ptr[j];
        }
        let mut row_ptr = vec![0usize; n_workers + 1];
        for i in 0..n_workers {
            row_ptr[i + 1] = row_ptr[i] + row_counts[i];
        }
        let mut next = row_ptr.clone();
        let mut row_cols = vec![0usize; nnz];
        let mut row_vals = vec![0u32; nnz];
        // columns are visited in increasing order, so each row stays sorted
        for j in 0..n_firms {
            for k in col_ptr[j]..col_ptr[j + 1] {
                let i = col_rows[k];
                row_cols[next[i]] = j;
                row_vals[next[i]] = col_vals[k];
                next[i] += 1;
            }
        }
        let n_obs = worker_degrees.iter().sum();
        Self {
            n_workers,
            n_firms,
            col_ptr,
            col_rows,
            col_vals,
            row_ptr,
            row_cols,
            row_vals,
            worker_degrees,
            firm_degrees,
            n_obs,
        }
    }

    pub fn n_workers(&self) -> usize {
        self.n_workers
    }
    pub fn n_firms(&self) -> usize {
        self.n_firms
    }
    /// Total number of observations `N = Σ d_ij`.
    pub fn n_obs(&self) -> u64 {
        self.n_obs
    }
    /// Number of distinct matched pairs.
    pub fn n_edges(&self) -> usize {
        self.col_rows.len()
    }
    pub fn worker_degrees(&self) -> &[u64] {
        &self.worker_degrees
    }
    pub fn firm_degrees(&self) -> &[u64] {
        &self.firm_degrees
    }
    pub fn max_worker_degree(&self) -> u64 {
        self.worker_degrees.iter().copied().max().unwrap_or(0)
    }
    pub fn max_firm_degree(&self) -> u64 {
        self.firm_degrees.iter().copied().max().unwrap_or(0)
    }
    pub fn isolated_workers(&self) -> usize {
        self.worker_degrees.iter().filter(|d| **d == 0).count()
    }
    pub fn isolated_firms(&self) -> usize {
        self.firm_degrees.iter().filter(|d| **d == 0).count()
    }
    pub fn has_isolated_nodes(&self) -> bool {
        self.isolated_workers() + self.isolated_firms() > 0
    }

    /// Edges `(worker, firm, d_ij)` in (firm, worker) order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, u32)> + '_ {
        (0..self.n_firms).flat_map(move |j| {
            (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |k| (self.col_rows[k], j, self.col_vals[k]))
        })
    }

    /// `(firm, d_ij)` pairs of worker `i`, sorted by firm.
    pub fn worker_edges(&self, i: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.row_cols[k], self.row_vals[k]))
    }

    /// `(worker, d_ij)` pairs of firm `j`, sorted by worker.
    pub fn firm_edges(&self, j: usize) -> impl Iterator<Item = (usize, u32)> + '_ {
        (self.col_ptr[j]..self.col_ptr[j + 1]).map(move |k| (self.col_rows[k], self.col_vals[k]))
    }

    /// Observation rows in canonical (worker, firm, spell) order.
    pub fn observations(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_workers).flat_map(move |i| {
            self.worker_edges(i)
                .flat_map(move |(j, d)| std::iter::repeat_n((i, j), d as usize))
        })
    }

    /// `y = B x` with `x` indexed by firms.
    pub fn mul_b(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n_workers {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.row_vals[k] as f64 * x[self.row_cols[k]];
            }
            y[i] = s;
        }
    }

    /// `y = Bᵀ x` with `x` indexed by workers.
    pub fn mul_bt(&self, x: &[f64], y: &mut [f64]) {
        for j in 0..self.n_firms {
            let mut s = 0.0;
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                s += self.col_vals[k] as f64 * x[self.col_rows[k]];
            }
            y[j] = s;
        }
    }

    pub fn dense_adjacency(&self) -> nalgebra::DMatrix<f64> {
        let mut b = nalgebra::DMatrix::zeros(self.n_workers, self.n_firms);
        for (i, j, d) in self.edges() {
            b[(i, j)] = d as f64;
        }
        b
    }

    /// Connected components by union–find over the edges. Isolated nodes form
    /// their own singleton components. Labels are assigned in order of first
    /// appearance scanning workers then firms.
    pub fn connected_components(&self) -> ComponentLabeling {
        let n = self.n_workers;
        let total = n + self.n_firms;
        let mut uf = UnionFind::new(total);
        for (i, j, _) in self.edges() {
            uf.union(i, n + j);
        }
        let mut label_of_root = vec![usize::MAX; total];
        let mut labels = vec![0usize; total];
        let mut next = 0;
        for v in 0..total {
            let r = uf.find(v);
            if label_of_root[r] == usize::MAX {
                label_of_root[r] = next;
                next += 1;
            }
            labels[v] = label_of_root[r];
        }
        let mut sizes = vec![ComponentSize::default(); next];
        for i in 0..n {
            let c = labels[i];
            sizes[c].workers += 1;
            sizes[c].observations += self.worker_degrees[i];
            sizes[c].min_worker = sizes[c].min_worker.min(i);
        }
        for j in 0..self.n_firms {
            sizes[labels[n + j]].firms += 1;
        }
        let firm_component = labels.split_off(n);
        ComponentLabeling { worker_component: labels, firm_component, component_sizes: sizes }
    }

    /// Subgraph induced by one component, nodes relabeled in increasing
    /// original order.
    pub fn component_subgraph(&self, labeling: &ComponentLabeling, component: usize) -> (BipartiteGraph, NodeMapping) {
        let workers: Vec<usize> =
            (0..self.n_workers).filter(|&i| labeling.worker_component[i] == component).collect();
        let firms: Vec<usize> = (0..self.n_firms).filter(|&j| labeling.firm_component[j] == component).collect();
        let mapping = NodeMapping::new(workers, firms, self.n_workers, self.n_firms);
        (self.relabel(&mapping), mapping)
    }

    /// Keeps only the nodes listed in `mapping` and relabels them.
    pub fn relabel(&self, mapping: &NodeMapping) -> BipartiteGraph {
        let mut merged = Vec::new();
        for (new_j, &old_j) in mapping.firms.iter().enumerate() {
            for (old_i, d) in self.firm_edges(old_j) {
                if let Some(new_i) = mapping.worker_new(old_i) {
                    merged.push((new_j, new_i, d as u64));
                }
            }
        }
        merged.sort_unstable();
        BipartiteGraph::from_sorted_unique(mapping.workers.len(), mapping.firms.len(), &merged)
    }

    /// The component with the largest observation count; ties go to the
    /// component with more workers, then to the lowest worker index.
    pub fn largest_component(&self) -> Result<(BipartiteGraph, NodeMapping)> {
        if self.n_obs == 0 {
            return Err(Error::InvalidInput("largest_component needs a graph with at least one edge".into()));
        }
        let labeling = self.connected_components();
        let best = labeling.largest();
        Ok(self.component_subgraph(&labeling, best))
    }

    pub fn is_connected(&self) -> bool {
        self.n_workers + self.n_firms > 0 && self.connected_components().n_components() == 1
    }

    pub fn summary(&self) -> GraphSummary {
        let labeling = self.connected_components();
        let (n, p, nn) = (self.n_workers as f64, self.n_firms as f64, self.n_obs as f64);
        GraphSummary {
            n: self.n_workers,
            p: self.n_firms,
            n_obs: self.n_obs,
            n_components: labeling.n_nonempty_components(),
            sparsity: if n * p > 0.0 { nn / (n * p) } else { 0.0 },
            avg_worker_degree: if n > 0.0 { nn / n } else { 0.0 },
            avg_firm_degree: if p > 0.0 { nn / p } else { 0.0 },
            isolated_workers: self.isolated_workers(),
            isolated_firms: self.isolated_firms(),
        }
    }
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect(), size: vec![1; n] }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ComponentSize {
    pub workers: usize,
    pub firms: usize,
    pub observations: u64,
    #[serde(skip)]
    min_worker: usize,
}

impl Default for ComponentSize {
    fn default() -> Self {
        Self { workers: 0, firms: 0, observations: 0, min_worker: usize::MAX }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComponentLabeling {
    pub worker_component: Vec<usize>,
    pub firm_component: Vec<usize>,
    pub component_sizes: Vec<ComponentSize>,
}

impl ComponentLabeling {
    pub fn n_components(&self) -> usize {
        self.component_sizes.len()
    }

    /// Components with at least one observation.
    pub fn n_nonempty_components(&self) -> usize {
        self.component_sizes.iter().filter(|c| c.observations > 0).count()
    }

    pub fn largest(&self) -> usize {
        let mut best = 0;
        for (c, s) in self.component_sizes.iter().enumerate().skip(1) {
            let b = &self.component_sizes[best];
            let key = (s.observations, s.workers, std::cmp::Reverse(s.min_worker));
            let best_key = (b.observations, b.workers, std::cmp::Reverse(b.min_worker));
            if key > best_key {
                best = c;
            }
        }
        best
    }

    pub fn describe(&self, limit: usize) -> String {
        let mut parts: Vec<String> = self
            .component_sizes
            .iter()
            .take(limit)
            .enumerate()
            .map(|(c, s)| format!("#{c}: {}w/{}f/{}obs", s.workers, s.firms, s.observations))
            .collect();
        if self.component_sizes.len() > limit {
            parts.push(format!("... {} more", self.component_sizes.len() - limit));
        }
        parts.join(", ")
    }
}

/// New-to-old node index maps produced by component selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMapping {
    pub workers: Vec<usize>,
    pub firms: Vec<usize>,
    #[serde(skip)]
    worker_lookup: Vec<Option<usize>>,
    #[serde(skip)]
    firm_lookup: Vec<Option<usize>>,
}

impl NodeMapping {
    pub fn new(workers: Vec<usize>, firms: Vec<usize>, old_workers: usize, old_firms: usize) -> Self {
        let mut worker_lookup = vec![None; old_workers];
        for (new, &old) in workers.iter().enumerate() {
            worker_lookup[old] = Some(new);
        }
        let mut firm_lookup = vec![None; old_firms];
        for (new, &old) in firms.iter().enumerate() {
            firm_lookup[old] = Some(new);
        }
        Self { workers, firms, worker_lookup, firm_lookup }
    }

    pub fn identity(n: usize, p: usize) -> Self {
        Self::new((0..n).collect(), (0..p).collect(), n, p)
    }

    pub fn worker_new(&self, old: usize) -> Option<usize> {
        self.worker_lookup.get(old).copied().flatten()
    }

    pub fn firm_new(&self, old: usize) -> Option<usize> {
        self.firm_lookup.get(old).copied().flatten()
    }

    /// Composition: `self` maps a subgraph of the graph `inner` was taken from.
    pub fn compose(&self, inner: &NodeMapping) -> NodeMapping {
        let workers = self.workers.iter().map(|&i| inner.workers[i]).collect();
        let firms = self.firms.iter().map(|&j| inner.firms[j]).collect();
        NodeMapping::new(workers, firms, inner.worker_lookup.len(), inner.firm_lookup.len())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub n: usize,
    pub p: usize,
    #[serde(rename = "N")]
    pub n_obs: u64,
    pub n_components: usize,
    pub sparsity: f64,
    pub avg_worker_degree: f64,
    pub avg_firm_degree: f64,
    pub isolated_workers: usize,
    pub isolated_firms: usize,
}

fn regularized_degrees(degrees: &[u64], lambda: f64, kind: &'static str) -> Result<Vec<f64>> {
    degrees
        .iter()
        .enumerate()
        .map(|(idx, &d)| {
            let v = d as f64 + lambda;
            if v <= 0.0 {
                Err(Error::ZeroDegree { kind, index: idx })
            } else {
                Ok(v)
            }
        })
        .collect()
}

/// `E_λ = D_{w,λ}^{-1/2} B D_{f,λ}^{-1/2}` as a sparse operator.
pub struct NormalizedAdjacency<'g> {
    graph: &'g BipartiteGraph,
    worker_scale: Vec<f64>,
    firm_scale: Vec<f64>,
}

impl<'g> NormalizedAdjacency<'g> {
    pub fn new(graph: &'g BipartiteGraph, penalties: RidgePenalties) -> Result<Self> {
        let dw = regularized_degrees(&graph.worker_degrees, penalties.lambda_w, "worker")?;
        let df = regularized_degrees(&graph.firm_degrees, penalties.lambda_f, "firm")?;
        Ok(Self {
            graph,
            worker_scale: dw.iter().map(|d| 1.0 / d.sqrt()).collect(),
            firm_scale: df.iter().map(|d| 1.0 / d.sqrt()).collect(),
        })
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.graph
            .worker_edges(i)
            .find(|(jj, _)| *jj == j)
            .map(|(_, d)| d as f64 * self.worker_scale[i] * self.firm_scale[j])
            .unwrap_or(0.0)
    }
}

pub fn normalized_adjacency(graph: &BipartiteGraph, penalties: RidgePenalties) -> Result<NormalizedAdjacency<'_>> {
    NormalizedAdjacency::new(graph, penalties)
}

impl LinearOperator for NormalizedAdjacency<'_> {
    fn nrows(&self) -> usize {
        self.graph.n_workers
    }
    fn ncols(&self) -> usize {
        self.graph.n_firms
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let xs: Vec<f64> = x.iter().zip(&self.firm_scale).map(|(a, s)| a * s).collect();
        self.graph.mul_b(&xs, y);
        for (v, s) in y.iter_mut().zip(&self.worker_scale) {
            *v *= s;
        }
    }
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        let xs: Vec<f64> = x.iter().zip(&self.worker_scale).map(|(a, s)| a * s).collect();
        self.graph.mul_bt(&xs, y);
        for (v, s) in y.iter_mut().zip(&self.firm_scale) {
            *v *= s;
        }
    }
}

/// One of the four regularized Laplacians of a realized graph.
///
/// Normalized: `I − E_λ E_λᵀ` (workers) or `I − E_λᵀ E_λ` (firms).
/// Unnormalized: `D_{w,λ} − B D_{f,λ}^{-1} Bᵀ` or `D_{f,λ} − Bᵀ D_{w,λ}^{-1} B`.
pub struct Laplacian<'g> {
    graph: &'g BipartiteGraph,
    side: Side,
    normalized: bool,
    dw: Vec<f64>,
    df: Vec<f64>,
}

impl<'g> Laplacian<'g> {
    pub fn new(graph: &'g BipartiteGraph, penalties: RidgePenalties, side: Side, normalized: bool) -> Result<Self> {
        let dw = regularized_degrees(&graph.worker_degrees, penalties.lambda_w, "worker")?;
        let df = regularized_degrees(&graph.firm_degrees, penalties.lambda_f, "firm")?;
        Ok(Self { graph, side, normalized, dw, df })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn dim(&self) -> usize {
        match self.side {
            Side::Worker => self.graph.n_workers,
            Side::Firm => self.graph.n_firms,
        }
    }

    /// Diagonal entries, used as the Jacobi preconditioner.
    pub fn diagonal(&self) -> Vec<f64> {
        let g = self.graph;
        match self.side {
            Side::Worker => (0..g.n_workers)
                .map(|i| {
                    let off: f64 = g.worker_edges(i).map(|(j, d)| (d as f64).powi(2) / self.df[j]).sum();
                    if self.normalized {
                        1.0 - off / self.dw[i]
                    } else {
                        self.dw[i] - off
                    }
                })
                .collect(),
            Side::Firm => (0..g.n_firms)
                .map(|j| {
                    let off: f64 = g.firm_edges(j).map(|(i, d)| (d as f64).powi(2) / self.dw[i]).sum();
                    if self.normalized {
                        1.0 - off / self.df[j]
                    } else {
                        self.df[j] - off
                    }
                })
                .collect(),
        }
    }

    /// Dense matrix built entrywise from the one-mode projection.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let g = self.graph;
        let m = self.dim();
        let mut a = nalgebra::DMatrix::zeros(m, m);
        match self.side {
            Side::Firm => {
                for i in 0..g.n_workers {
                    let row: Vec<(usize, u32)> = g.worker_edges(i).collect();
                    for &(j, d) in &row {
                        for &(j2, d2) in &row {
                            a[(j, j2)] -= d as f64 * d2 as f64 / self.dw[i];
                        }
                    }
                }
                for j in 0..m {
                    a[(j, j)] += self.df[j];
                }
                if self.normalized {
                    for j in 0..m {
                        for j2 in 0..m {
                            a[(j, j2)] /= (self.df[j] * self.df[j2]).sqrt();
                        }
                    }
                }
            }
            Side::Worker => {
                for j in 0..g.n_firms {
                    let col: Vec<(usize, u32)> = g.firm_edges(j).collect();
                    for &(i, d) in &col {
                        for &(i2, d2) in &col {
                            a[(i, i2)] -= d as f64 * d2 as f64 / self.df[j];
                        }
                    }
                }
                for i in 0..m {
                    a[(i, i)] += self.dw[i];
                }
                if self.normalized {
                    for i in 0..m {
                        for i2 in 0..m {
                            a[(i, i2)] /= (self.dw[i] * self.dw[i2]).sqrt();
                        }
                    }
                }
            }
        }
        a
    }
}

impl LinearOperator for Laplacian<'_> {
    fn nrows(&self) -> usize {
        self.dim()
    }
    fn ncols(&self) -> usize {
        self.dim()
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let g = self.graph;
        match self.side {
            Side::Firm => {
                let xs: Vec<f64> = if self.normalized {
                    x.iter().zip(&self.df).map(|(a, d)| a / d.sqrt()).collect()
                } else {
                    x.to_vec()
                };
                let mut t = vec![0.0; g.n_workers];
                g.mul_b(&xs, &mut t);
                for (v, d) in t.iter_mut().zip(&self.dw) {
                    *v /= d;
                }
                g.mul_bt(&t, y);
                for j in 0..g.n_firms {
                    y[j] = if self.normalized {
                        x[j] - y[j] / self.df[j].sqrt()
                    } else {
                        self.df[j] * x[j] - y[j]
                    };
                }
            }
            Side::Worker => {
                let xs: Vec<f64> = if self.normalized {
                    x.iter().zip(&self.dw).map(|(a, d)| a / d.sqrt()).collect()
                } else {
                    x.to_vec()
                };
                let mut t = vec![0.0; g.n_firms];
                g.mul_bt(&xs, &mut t);
                for (v, d) in t.iter_mut().zip(&self.df) {
                    *v /= d;
                }
                g.mul_b(&t, y);
                for i in 0..g.n_workers {
                    y[i] = if self.normalized {
                        x[i] - y[i] / self.dw[i].sqrt()
                    } else {
                        self.dw[i] * x[i] - y[i]
                    };
                }
            }
        }
    }
    fn apply_transpose(&self, x: &[f64], y: &mut [f64]) {
        self.apply(x, y)
    }
}

pub struct Laplacians<'g> {
    pub worker: Laplacian<'g>,
    pub firm: Laplacian<'g>,
    pub worker_unnormalized: Laplacian<'g>,
    pub firm_unnormalized: Laplacian<'g>,
}

/// `(L_{w,λ}, L_{f,λ}, L̃_{w,λ}, L̃_{f,λ})`.
pub fn regularized_laplacians(graph: &BipartiteGraph, penalties: RidgePenalties) -> Result<Laplacians<'_>> {
    Ok(Laplacians {
        worker: Laplacian::new(graph, penalties, Side::Worker, true)?,
        firm: Laplacian::new(graph, penalties, Side::Firm, true)?,
        worker_unnormalized: Laplacian::new(graph, penalties, Side::Worker, false)?,
        firm_unnormalized: Laplacian::new(graph, penalties, Side::Firm, false)?,
    })
}
