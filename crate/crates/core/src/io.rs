//! CSV and JSON readers and writers. Node IDs in files are strings, interned
//! to contiguous indices in order of first appearance. Lines starting with
//! `#` are comments.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::decomposition::{DecompositionRow, DensityReport};
use crate::error::{Error, Result};
use crate::estimator::{OutcomePanel, RidgeFit};
use crate::graph::{BipartiteGraph, NodeMapping};
use crate::sbm::NodeAssignment;

/// String IDs to indices, in order of first appearance.
#[derive(Debug, Clone, Default)]
pub struct Interner {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_ids(ids: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(ids.len());
        for (k, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), k).is_some() {
                return Err(Error::InvalidInput(format!("duplicate node id {id:?}")));
            }
        }
        Ok(Self { ids, index })
    }

    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&k) = self.index.get(id) {
            return k;
        }
        let k = self.ids.len();
        self.ids.push(id.to_string());
        self.index.insert(id.to_string(), k);
        k
    }

    pub fn get(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }
}

/// ID strings for the worker and firm indices of a graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeLabels {
    pub workers: Vec<String>,
    pub firms: Vec<String>,
}

impl NodeLabels {
    /// Decimal labels `0..n`, `0..p`.
    pub fn numeric(n: usize, p: usize) -> Self {
        Self { workers: (0..n).map(|i| i.to_string()).collect(), firms: (0..p).map(|j| j.to_string()).collect() }
    }

    /// Labels of the original indices a mapping points to.
    pub fn from_mapping(mapping: &NodeMapping) -> Self {
        Self {
            workers: mapping.workers.iter().map(|i| i.to_string()).collect(),
            firms: mapping.firms.iter().map(|j| j.to_string()).collect(),
        }
    }

    /// Labels of a panel whose mapping indexes the given universes.
    pub fn of_panel(panel: &OutcomePanel, workers: &Interner, firms: &Interner) -> Self {
        Self {
            workers: panel.mapping.workers.iter().map(|&i| workers.ids()[i].clone()).collect(),
            firms: panel.mapping.firms.iter().map(|&j| firms.ids()[j].clone()).collect(),
        }
    }
}

fn create(path: &Path, header: &[String]) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    for line in header {
        writeln!(w, "# {line}")?;
    }
    Ok(csv::Writer::from_writer(w))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?)
}

fn check_headers(r: &mut csv::Reader<File>, want: &[&str], path: &Path) -> Result<()> {
    let got: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if got.len() < want.len() || got.iter().zip(want).any(|(a, b)| a != b) {
        return Err(Error::InvalidInput(format!(
            "{}: expected columns {}, found {}",
            path.display(),
            want.join(","),
            got.join(",")
        )));
    }
    Ok(())
}

fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str, line: u64) -> Result<T> {
    let s = field.ok_or_else(|| Error::InvalidInput(format!("line {line}: missing {what}")))?;
    s.parse().map_err(|_| Error::InvalidInput(format!("line {line}: cannot parse {what} {s:?}")))
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn finish<W: Write>(w: csv::Writer<W>) -> Result<()> {
    let mut inner = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    inner.flush()?;
    Ok(())
}

/// `worker_id,firm_id,multiplicity`.
pub fn write_edges(path: &Path, graph: &BipartiteGraph, labels: &NodeLabels, header: &[String]) -> Result<()> {
    let mut w = create(path, header)?;
    w.write_record(["worker_id", "firm_id", "multiplicity"])?;
    let mut rows: Vec<(usize, usize, u32)> = graph.edges().collect();
    rows.sort_unstable();
    for (i, j, d) in rows {
        w.write_record([labels.workers[i].as_str(), labels.firms[j].as_str(), &d.to_string()])?;
    }
    finish(w)
}

/// Reads an edge list; duplicate pairs are summed. Nodes are indexed in order
/// of first appearance.
pub fn read_edges(path: &Path) -> Result<(BipartiteGraph, NodeLabels)> {
    let mut r = reader(path)?;
    check_headers(&mut r, &["worker_id", "firm_id", "multiplicity"], path)?;
    let (mut wi, mut fi) = (Interner::new(), Interner::new());
    let mut edges = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let i = wi.intern(rec.get(0).unwrap_or(""));
        let j = fi.intern(rec.get(1).unwrap_or(""));
        let d: i64 = parse(rec.get(2), "multiplicity", line)?;
        edges.push((i, j, d));
    }
    let g = BipartiteGraph::from_edges(wi.len(), fi.len(), &edges)?;
    Ok((g, NodeLabels { workers: wi.ids, firms: fi.ids }))
}

/// Two-column `node_id,index` file for one side.
pub fn write_mapping(path: &Path, ids: &[String], header: &[String]) -> Result<()> {
    let mut w = create(path, header)?;
    w.write_record(["node_id", "index"])?;
    for (k, id) in ids.iter().enumerate() {
        w.write_record([id.as_str(), &k.to_string()])?;
    }
    finish(w)
}

pub fn read_mapping(path: &Path) -> Result<Vec<String>> {
    let mut r = reader(path)?;
    check_headers(&mut r, &["node_id", "index"], path)?;
    let mut pairs = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let k: usize = parse(rec.get(1), "index", line_of(&rec))?;
        pairs.push((k, rec.get(0).unwrap_or("").to_string()));
    }
    pairs.sort();
    if pairs.iter().enumerate().any(|(pos, (k, _))| pos != *k) {
        return Err(Error::InvalidInput(format!("{}: indices are not 0..n", path.display())));
    }
    Ok(pairs.into_iter().map(|(_, id)| id).collect())
}

/// `node_kind,node_id,type,theta` with 1-based types; `theta` is empty for
/// workers.
pub fn write_assignment(path: &Path, a: &NodeAssignment, header: &[String]) -> Result<()> {
    let mut w = create(path, header)?;
    w.write_record(["node_kind", "node_id", "type", "theta"])?;
    for (i, t) in a.worker_types.iter().enumerate() {
        w.write_record(["worker", &i.to_string(), &(t + 1).to_string(), ""])?;
    }
    for (j, t) in a.firm_types.iter().enumerate() {
        w.write_record(["firm", &j.to_string(), &(t + 1).to_string(), &a.theta[j].to_string()])?;
    }
    finish(w)
}

/// Reads an assignment written by [`write_assignment`]. Node IDs must be
/// `0..n` and `0..p`.
pub fn read_assignment(path: &Path, k: usize) -> Result<NodeAssignment> {
    let mut r = reader(path)?;
    check_headers(&mut r, &["node_kind", "node_id", "type", "theta"], path)?;
    let mut workers = Vec::new();
    let mut firms = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let id: usize = parse(rec.get(1), "node_id", line)?;
        let t: usize = parse(rec.get(2), "type", line)?;
        if t == 0 {
            return Err(Error::InvalidInput(format!("line {line}: types are 1-based")));
        }
        match rec.get(0) {
            Some("worker") => workers.push((id, t - 1)),
            Some("firm") => firms.push((id, t - 1, parse::<f64>(rec.get(3), "theta", line)?)),
            other => return Err(Error::InvalidInput(format!("line {line}: unknown node_kind {other:?}"))),
        }
    }
    workers.sort_unstable();
    firms.sort_by_key(|f| f.0);
    if workers.iter().enumerate().any(|(pos, w)| w.0 != pos) || firms.iter().enumerate().any(|(pos, f)| f.0 != pos) {
        return Err(Error::InvalidInput(format!("{}: node ids must be 0..n and 0..p", path.display())));
    }
    NodeAssignment::new(
        k,
        workers.iter().map(|w| w.1).collect(),
        firms.iter().map(|f| f.1).collect(),
        firms.iter().map(|f| f.2).collect(),
    )
}

/// `worker_id,firm_id,y` in canonical order.
pub fn write_panel(path: &Path, panel: &OutcomePanel, labels: &NodeLabels, header: &[String]) -> Result<()> {
    let mut w = create(path, header)?;
    w.write_record(["worker_id", "firm_id", "y"])?;
    for (i, j, y) in panel.rows() {
        w.write_record([labels.workers[i].as_str(), labels.firms[j].as_str(), &y.to_string()])?;
    }
    finish(w)
}

/// Reads a panel, interning IDs into shared universes so that several
/// panels (e.g. train and test) index nodes consistently. The panel's
/// mapping points into the universes.
pub fn read_panel_into(path: &Path, workers: &mut Interner, firms: &mut Interner) -> Result<OutcomePanel> {
    let mut r = reader(path)?;
    check_headers(&mut r, &["worker_id", "firm_id", "y"], path)?;
    let (mut lw, mut lf) = (Interner::new(), Interner::new());
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let (a, b) = (rec.get(0).unwrap_or(""), rec.get(1).unwrap_or(""));
        let y: f64 = parse(rec.get(2), "y", line)?;
        if !y.is_finite() {
            return Err(Error::InvalidInput(format!("line {line}: y must be finite")));
        }
        rows.push((lw.intern(a), lf.intern(b), y));
    }
    let gw: Vec<usize> = lw.ids().iter().map(|id| workers.intern(id)).collect();
    let gf: Vec<usize> = lf.ids().iter().map(|id| firms.intern(id)).collect();
    let local = OutcomePanel::from_rows(lw.len(), lf.len(), &rows)?;
    let mapping = NodeMapping::new(gw, gf, workers.len(), firms.len());
    OutcomePanel::with_mapping(local.graph, local.y, mapping)
}

/// Reads a single panel; labels are its own IDs.
pub fn read_panel(path: &Path) -> Result<(OutcomePanel, NodeLabels)> {
    let (mut w, mut f) = (Interner::new(), Interner::new());
    let panel = read_panel_into(path, &mut w, &mut f)?;
    let labels = NodeLabels::of_panel(&panel, &w, &f);
    Ok((panel, labels))
}

/// `node_kind,node_id,effect_estimate`.
pub fn write_fit(path: &Path, fit: &RidgeFit, labels: &NodeLabels, header: &[String]) -> Result<()> {
    let mut w = create(path, header)?;
    w.write_record(["node_kind", "node_id", "effect_estimate"])?;
    for (i, v) in fit.mu_hat.iter().enumerate() {
        w.write_record(["worker", labels.workers[i].as_str(), &v.to_string()])?;
    }
    for (j, v) in fit.phi_hat.iter().enumerate() {
        w.write_record(["firm", labels.firms[j].as_str(), &v.to_string()])?;
    }
    finish(w)
}

/// Reads `node_kind,node_id,effect_estimate` into `(worker, firm)` maps keyed
/// by node id.
pub fn read_fit(path: &Path) -> Result<(HashMap<String, f64>, HashMap<String, f64>)> {
    let mut r = reader(path)?;
    check_headers(&mut r, &["node_kind", "node_id", "effect_estimate"], path)?;
    let (mut w, mut f) = (HashMap::new(), HashMap::new());
    for rec in r.records() {
        let rec = rec?;
        let line = line_of(&rec);
        let v: f64 = parse(rec.get(2), "effect_estimate", line)?;
        let id = rec.get(1).unwrap_or("").to_string();
        match rec.get(0) {
            Some("worker") => w.insert(id, v),
            Some("firm") => f.insert(id, v),
            other => return Err(Error::InvalidInput(format!("line {line}: unknown node_kind {other:?}"))),
        };
    }
    Ok((w, f))
}

fn opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => x.to_string(),
        _ => String::new(),
    }
}

pub const DECOMPOSITION_COLUMNS: [&str; 9] =
    ["estimator", "share_worker", "share_firm", "share_2cov", "share_residual", "fe_corr", "oos_mse", "lw_norm", "lf_norm"];

pub fn write_decomposition_table(path: &Path, rows: &[DecompositionRow], header: &[String]) -> Result<()> {
    let mut w = create(path, header)?;
    w.write_record(DECOMPOSITION_COLUMNS)?;
    for r in rows {
        let d = &r.decomposition;
        w.write_record([
            r.estimator.clone(),
            d.share_worker.to_string(),
            d.share_firm.to_string(),
            d.share_2cov.to_string(),
            d.share_residual.to_string(),
            opt(Some(d.fe_correlation)),
            opt(r.oos_mse),
            opt(r.lw_norm),
            opt(r.lf_norm),
        ])?;
    }
    finish(w)
}

/// `x,density`, or a single `point_mass` row for degenerate input.
pub fn write_density(path: &Path, report: &DensityReport, header: &[String]) -> Result<()> {
    let mut w = create(path, header)?;
    w.write_record(["x", "density"])?;
    match report.point_mass {
        Some(v) => w.write_record([v.to_string(), "point_mass".to_string()])?,
        None => {
            for (x, d) in report.x.iter().zip(&report.density) {
                w.write_record([x.to_string(), d.to_string()])?;
            }
        }
    }
    finish(w)
}

/// `node_id,truth,estimate`.
pub fn write_scatter(path: &Path, ids: &[String], truth: &[f64], estimate: &[f64], header: &[String]) -> Result<()> {
    let mut w = create(path, header)?;
    w.write_record(["node_id", "truth", "estimate"])?;
    for ((id, t), e) in ids.iter().zip(truth).zip(estimate) {
        w.write_record([id.clone(), t.to_string(), e.to_string()])?;
    }
    finish(w)
}

/// Generic CSV with the given columns.
pub fn write_rows(path: &Path, columns: &[&str], rows: &[Vec<String>], header: &[String]) -> Result<()> {
    let mut w = create(path, header)?;
    w.write_record(columns)?;
    for r in rows {
        w.write_record(r)?;
    }
    finish(w)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edges_round_trip_with_string_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        std::fs::write(&path, "# note\nworker_id,firm_id,multiplicity\nann,acme,1\nbob,acme,2\nann,zed,1\nann,acme,1\n").unwrap();
        let (g, labels) = read_edges(&path).unwrap();
        assert_eq!((g.n_workers(), g.n_firms(), g.n_obs()), (2, 2, 5));
        assert_eq!(labels.workers, vec!["ann", "bob"]);
        let out = dir.path().join("o.csv");
        write_edges(&out, &g, &labels, &["h".into()]).unwrap();
        let (g2, l2) = read_edges(&out).unwrap();
        assert_eq!(l2, labels);
        assert_eq!(g2.edges().collect::<Vec<_>>(), g.edges().collect::<Vec<_>>());
    }

    #[test]
    fn negative_multiplicity_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        std::fs::write(&path, "worker_id,firm_id,multiplicity\na,b,-1\n").unwrap();
        assert!(read_edges(&path).is_err());
    }

    #[test]
    fn shared_universe_aligns_panels() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        std::fs::write(&a, "worker_id,firm_id,y\nw1,f1,1.0\nw2,f1,2.0\n").unwrap();
        std::fs::write(&b, "worker_id,firm_id,y\nw2,f1,3.0\nw3,f2,4.0\n").unwrap();
        let (mut wi, mut fi) = (Interner::new(), Interner::new());
        let pa = read_panel_into(&a, &mut wi, &mut fi).unwrap();
        let pb = read_panel_into(&b, &mut wi, &mut fi).unwrap();
        assert_eq!(pa.mapping.workers, vec![0, 1]);
        assert_eq!(pb.mapping.workers, vec![1, 2]);
        assert_eq!(wi.len(), 3);
    }
}
