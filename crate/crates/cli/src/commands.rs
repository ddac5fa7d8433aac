//! Subcommand implementations. Each returns the process exit code.

use ridgefe::bounds::{BoundExperiment, BoundKind};
use ridgefe::decomposition::{
    cross_validate_averaged, degree_scale, denormalize, density_report, simulate as run_simulation, table_rows,
    table_rows_from, DecompositionRow, NetworkSummary, PenaltyChoice, Simulation, TableRun, DENSITY_GRID,
};
use ridgefe::estimator::{
    debiased_quadratics, ols_fit_pinned, ridge_fit_with, OutcomePanel, RidgeFit, SolverOptions, TraceOptions,
};
use ridgefe::io::{self, Interner, NodeLabels};
use ridgefe::{RidgePenalties, Side};
use serde::Serialize;

use crate::config::{
    BoundsRunConfig, CvConfig, DataSource, DecomposeConfig, EstimateConfig, EstimatorKind, GridChoice, ReportConfig,
    SimulateConfig,
};
use crate::output::{load, CmdResult, Failure, Loaded};
use crate::CommonArgs;

/// Exit code for an inapplicable bound regime reported as success.
pub const INAPPLICABLE: u8 = 4;

pub fn simulate(args: &CommonArgs) -> CmdResult<u8> {
    let ld: Loaded<SimulateConfig> = load(args)?;
    let c = &ld.config;
    ld.log(format!("simulating n0={} p0={} seed={}", c.sbm.n0, c.sbm.p0, c.sbm.seed));
    let sim = run_simulation(&c.sbm, &c.dgp)?;
    let h = ld.header();
    let full_labels = NodeLabels::numeric(sim.full_graph.n_workers(), sim.full_graph.n_firms());
    io::write_edges(&ld.path("edges.csv"), &sim.full_graph, &full_labels, &h)?;
    io::write_assignment(&ld.path("assignment.csv"), &sim.assignment, &h)?;
    let labels = NodeLabels::from_mapping(&sim.panel.mapping);
    io::write_panel(&ld.path("panel.csv"), &sim.panel, &labels, &h)?;
    io::write_mapping(&ld.path("worker_map.csv"), &labels.workers, &h)?;
    io::write_mapping(&ld.path("firm_map.csv"), &labels.firms, &h)?;
    write_truth(&ld, &sim, &full_labels)?;
    for d in 0..c.test_draws {
        let t = sim.test_panel(d)?;
        io::write_panel(&ld.path(&format!("test_panel_{d}.csv")), &t, &NodeLabels::from_mapping(&t.mapping), &h)?;
    }
    #[derive(Serialize)]
    struct Out {
        table: NetworkSummary,
        full_network: ridgefe::graph::GraphSummary,
        largest_component: ridgefe::graph::GraphSummary,
    }
    let out = Out {
        table: sim.summary(),
        full_network: sim.full_graph.summary(),
        largest_component: sim.panel.graph.summary(),
    };
    io::write_json(&ld.path("summary.json"), &ld.envelope(out))?;
    Ok(0)
}

fn write_truth(ld: &Loaded<SimulateConfig>, sim: &Simulation, labels: &NodeLabels) -> CmdResult<()> {
    let truth = RidgeFit {
        mu_hat: sim.dgp.mu.clone(),
        phi_hat: sim.dgp.phi.clone(),
        penalties: RidgePenalties::zero(),
        residuals: vec![],
        solver_info: ridgefe::estimator::SolverInfo {
            method: ridgefe::estimator::SolverMethod::DenseCholesky,
            iterations: 0,
            schur_residual: 0.0,
            normal_equation_residual: 0.0,
        },
        pinned_firm: None,
    };
    io::write_fit(&ld.path("truth.csv"), &truth, labels, &ld.header())?;
    Ok(())
}

/// Panel plus the universes its mapping indexes.
struct FilePanel {
    panel: OutcomePanel,
    workers: Interner,
    firms: Interner,
}

impl FilePanel {
    fn labels(&self) -> NodeLabels {
        NodeLabels::of_panel(&self.panel, &self.workers, &self.firms)
    }
}

fn penalties_from(choice: &PenaltyChoice, panel: &OutcomePanel) -> CmdResult<RidgePenalties> {
    match choice {
        PenaltyChoice::Normalized { lw, lf } => Ok(denormalize(panel, *lw, *lf)?),
        PenaltyChoice::Absolute { lambda_w, lambda_f } => Ok(RidgePenalties::new(*lambda_w, *lambda_f)?),
        PenaltyChoice::CrossValidated { .. } => {
            Err(Failure::Config("estimate takes fixed penalties; use the cv subcommand to select them".into()))
        }
    }
}

pub fn estimate(args: &CommonArgs) -> CmdResult<u8> {
    let ld: Loaded<EstimateConfig> = load(args)?;
    let c = &ld.config;
    let (mut workers, mut firms) = (Interner::new(), Interner::new());
    let mut panel = io::read_panel_into(&ld.resolve(&c.panel), &mut workers, &mut firms)?;
    if c.largest_component {
        panel = panel.largest_component()?;
    }
    let fp = FilePanel { panel, workers, firms };
    let panel = &fp.panel;
    let opts = c.solver.unwrap_or_default();
    ld.log(format!("{} workers, {} firms, {} observations", panel.graph.n_workers(), panel.graph.n_firms(), panel.n_obs()));
    let (fit, debiased) = match c.estimator {
        EstimatorKind::Ridge => {
            let choice = c
                .penalties
                .as_ref()
                .ok_or_else(|| Failure::Config("ridge needs a penalties block".into()))?;
            (ridge_fit_with(panel, penalties_from(choice, panel)?, opts)?, None)
        }
        EstimatorKind::Ols | EstimatorKind::OlsDebiased => {
            if c.penalties.is_some() {
                return Err(Failure::Config("OLS takes no penalties".into()));
            }
            let fit = ols_fit_pinned(panel, 0, opts)?;
            let deb = if c.estimator == EstimatorKind::OlsDebiased {
                let comp = debiased_quadratics(panel, &fit, c.trace.unwrap_or_default())?;
                let dec = ridgefe::decomposition::debiased_decomposition(&comp)?;
                Some((comp, dec))
            } else {
                None
            };
            (fit, deb)
        }
    };
    io::write_fit(&ld.path("fit.csv"), &fit, &fp.labels(), &ld.header())?;
    let (sw, sf) = degree_scale(panel);
    #[derive(Serialize)]
    struct Out<'a> {
        estimator: EstimatorKind,
        n: usize,
        p: usize,
        n_obs: usize,
        penalties: RidgePenalties,
        normalized_penalties: (f64, f64),
        solver: &'a ridgefe::estimator::SolverInfo,
        pinned_firm: Option<&'a str>,
        decomposition: ridgefe::decomposition::VarianceDecomposition,
        debiased: Option<&'a (ridgefe::estimator::DebiasedComponents, ridgefe::decomposition::VarianceDecomposition)>,
    }
    let labels = fp.labels();
    let out = Out {
        estimator: c.estimator,
        n: panel.graph.n_workers(),
        p: panel.graph.n_firms(),
        n_obs: panel.n_obs(),
        penalties: fit.penalties,
        normalized_penalties: (fit.penalties.lambda_w / sw, fit.penalties.lambda_f / sf),
        solver: &fit.solver_info,
        pinned_firm: fit.pinned_firm.map(|j| labels.firms[j].as_str()),
        decomposition: ridgefe::decomposition::decompose(panel, &fit)?,
        debiased: debiased.as_ref(),
    };
    io::write_json(&ld.path("diagnostics.json"), &ld.envelope(out))?;
    Ok(0)
}

/// Training panel (largest component), test panels on shared labels, and
/// true effects when known.
struct Prepared {
    train: FilePanel,
    tests: Vec<OutcomePanel>,
    truth: Option<(Vec<f64>, Vec<f64>)>,
    summary: Option<NetworkSummary>,
}

fn prepare<C: Serialize>(ld: &Loaded<C>, data: &DataSource, test_draws: u64) -> CmdResult<Prepared> {
    match data {
        DataSource::Simulation(block) => {
            ld.log(format!("simulating seed {}", block.sbm.seed));
            let sim = run_simulation(&block.sbm, &block.dgp)?;
            let tests = (0..test_draws.max(1)).map(|d| sim.test_panel(d)).collect::<Result<Vec<_>, _>>()?;
            let n = sim.assignment.n_workers();
            let p = sim.assignment.n_firms();
            let workers = Interner::from_ids((0..n).map(|i| i.to_string()).collect())?;
            let firms = Interner::from_ids((0..p).map(|j| j.to_string()).collect())?;
            Ok(Prepared {
                truth: Some(sim.true_effects()),
                summary: Some(sim.summary()),
                train: FilePanel { panel: sim.panel, workers, firms },
                tests,
            })
        }
        DataSource::Files { panel, test_panels, truth } => {
            let (mut workers, mut firms) = (Interner::new(), Interner::new());
            let full = io::read_panel_into(&ld.resolve(panel), &mut workers, &mut firms)?;
            let tests = test_panels
                .iter()
                .map(|t| io::read_panel_into(&ld.resolve(t), &mut workers, &mut firms))
                .collect::<Result<Vec<_>, _>>()?;
            let train = full.largest_component()?;
            let fp = FilePanel { panel: train, workers, firms };
            let truth = match truth {
                Some(path) => {
                    let (tw, tf) = io::read_fit(&ld.resolve(path))?;
                    let labels = fp.labels();
                    let pick = |ids: &[String], map: &std::collections::HashMap<String, f64>| {
                        ids.iter()
                            .map(|id| map.get(id).copied().ok_or_else(|| Failure::Config(format!("truth lacks node {id}"))))
                            .collect::<CmdResult<Vec<f64>>>()
                    };
                    Some((pick(&labels.workers, &tw)?, pick(&labels.firms, &tf)?))
                }
                None => None,
            };
            Ok(Prepared { train: fp, tests, truth, summary: None })
        }
    }
}

pub fn decompose(args: &CommonArgs) -> CmdResult<u8> {
    let ld: Loaded<DecomposeConfig> = load(args)?;
    let c = &ld.config;
    let prep = prepare(&ld, &c.data, 1)?;
    let trace = c.trace.unwrap_or_default();
    ld.log("fitting");
    let run = table_rows_from(&prep.train.panel, &prep.tests, prep.truth.as_ref(), &c.penalties, c.include_ols, trace)?;
    let h = ld.header();
    io::write_decomposition_table(&ld.path("decomposition.csv"), &run.rows, &h)?;
    let labels = prep.train.labels();
    io::write_fit(&ld.path("fit_ridge.csv"), &run.ridge_fit, &labels, &h)?;
    if let Some(f) = &run.ols_fit {
        io::write_fit(&ld.path("fit_ols.csv"), f, &labels, &h)?;
    }
    if c.densities {
        write_densities(&ld, &run, prep.truth.as_ref(), &labels)?;
    }
    #[derive(Serialize)]
    struct Out<'a> {
        network: Option<&'a NetworkSummary>,
        rows: &'a [DecompositionRow],
        ridge_penalties: RidgePenalties,
        test_dropped_fraction: f64,
        debiased: Option<&'a ridgefe::estimator::DebiasedComponents>,
    }
    let out = Out {
        network: prep.summary.as_ref(),
        rows: &run.rows,
        ridge_penalties: run.ridge_fit.penalties,
        test_dropped_fraction: run.test_dropped_fraction,
        debiased: run.debiased.as_ref(),
    };
    io::write_json(&ld.path("summary.json"), &ld.envelope(out))?;
    Ok(0)
}

fn write_densities<C: Serialize>(
    ld: &Loaded<C>,
    run: &TableRun,
    truth: Option<&(Vec<f64>, Vec<f64>)>,
    labels: &NodeLabels,
) -> CmdResult<()> {
    let h = ld.header();
    let mut sets: Vec<(&str, &RidgeFit)> = vec![("ridge", &run.ridge_fit)];
    if let Some(f) = &run.ols_fit {
        sets.push(("ols", f));
    }
    for side in [Side::Worker, Side::Firm] {
        let (name, ids) = match side {
            Side::Worker => ("mu", &labels.workers),
            Side::Firm => ("phi", &labels.firms),
        };
        let pick = |f: &RidgeFit| match side {
            Side::Worker => f.mu_hat.clone(),
            Side::Firm => f.phi_hat.clone(),
        };
        let truth_side = truth.map(|t| match side {
            Side::Worker => t.0.clone(),
            Side::Firm => t.1.clone(),
        });
        if let Some(t) = &truth_side {
            if t.len() >= 2 {
                io::write_density(&ld.path(&format!("density_{name}_true.csv")), &density_report(t, DENSITY_GRID)?, &h)?;
            }
        }
        for (est, fit) in &sets {
            let v = pick(fit);
            if v.len() >= 2 {
                io::write_density(&ld.path(&format!("density_{name}_{est}.csv")), &density_report(&v, DENSITY_GRID)?, &h)?;
            }
            if let Some(t) = &truth_side {
                io::write_scatter(&ld.path(&format!("scatter_{name}_{est}.csv")), ids, t, &v, &h)?;
            }
        }
    }
    Ok(())
}

pub fn cv(args: &CommonArgs) -> CmdResult<u8> {
    let ld: Loaded<CvConfig> = load(args)?;
    let c = &ld.config;
    let prep = prepare(&ld, &c.data, c.test_draws)?;
    if prep.tests.is_empty() {
        return Err(Failure::Config("cross-validation needs at least one test panel".into()));
    }
    let train = &prep.train.panel;
    let grid = match &c.grid {
        GridChoice::Spec(spec) => spec.penalties(train)?,
        GridChoice::Points(pts) => {
            pts.iter().map(|&(a, b)| RidgePenalties::new(a, b)).collect::<Result<Vec<_>, _>>()?
        }
    };
    ld.log(format!("{} grid points, {} test panels", grid.len(), prep.tests.len()));
    let res = cross_validate_averaged(train, &prep.tests, &grid, SolverOptions::default())?;
    let (sw, sf) = degree_scale(train);
    let rows: Vec<Vec<String>> = res
        .grid
        .iter()
        .zip(&res.mse)
        .map(|(g, m)| {
            vec![
                g.lambda_w.to_string(),
                g.lambda_f.to_string(),
                (g.lambda_w / sw).to_string(),
                (g.lambda_f / sf).to_string(),
                m.map_or(String::new(), |v| v.to_string()),
            ]
        })
        .collect();
    io::write_rows(&ld.path("cv_grid.csv"), &["lambda_w", "lambda_f", "lw_norm", "lf_norm", "oos_mse"], &rows, &ld.header())?;
    #[derive(Serialize)]
    struct Out<'a> {
        network: Option<&'a NetworkSummary>,
        best: RidgePenalties,
        best_mse: f64,
        normalized: (f64, f64),
        dropped_fraction: f64,
        invalid_points: usize,
    }
    let out = Out {
        network: prep.summary.as_ref(),
        best: res.best,
        best_mse: res.best_mse,
        normalized: res.normalized,
        dropped_fraction: res.dropped_fraction,
        invalid_points: res.mse.iter().filter(|m| m.is_none()).count(),
    };
    io::write_json(&ld.path("cv.json"), &ld.envelope(out))?;
    Ok(0)
}

pub fn bounds(args: &CommonArgs) -> CmdResult<u8> {
    let ld: Loaded<BoundsRunConfig> = load(args)?;
    let cfg = &ld.config.bounds;
    let exp = BoundExperiment::from_config(cfg)?;
    let kinds: Vec<BoundKind> = cfg.theorems.iter().flat_map(|t| BoundKind::for_theorem(*t)).collect();
    ld.log(format!("{} replications, theorems {:?}, applicable={}", cfg.replications, cfg.theorems, exp.inputs.applicable));
    let report = exp.run(&kinds, cfg.replications)?;
    let mut rows = Vec::new();
    for e in &report.entries {
        for (r, d) in e.replication_index.iter().zip(&e.empirical_deviations) {
            rows.push(vec![
                e.theorem.to_string(),
                e.name.clone(),
                r.to_string(),
                d.to_string(),
                e.theoretical_bound.to_string(),
                u8::from(*d > e.theoretical_bound).to_string(),
            ]);
        }
    }
    io::write_rows(
        &ld.path("bounds.csv"),
        &["theorem", "bound", "replication", "deviation", "theoretical_bound", "violated"],
        &rows,
        &ld.header(),
    )?;
    #[derive(Serialize)]
    struct Entry<'a> {
        theorem: u8,
        name: &'a str,
        theoretical_bound: f64,
        probability_floor: f64,
        violation_rate: f64,
        allowed_violation_rate: f64,
        passes: bool,
        median_deviation: f64,
        max_deviation: f64,
        failed_replications: usize,
    }
    #[derive(Serialize)]
    struct Out<'a> {
        inputs: ridgefe::bounds::BoundInputs,
        replications: usize,
        identity_violations: usize,
        applicable: bool,
        entries: Vec<Entry<'a>>,
    }
    let out = Out {
        inputs: report.inputs,
        replications: report.replications,
        identity_violations: report.identity_violations,
        applicable: report.inputs.applicable,
        entries: report
            .entries
            .iter()
            .map(|e| Entry {
                theorem: e.theorem,
                name: &e.name,
                theoretical_bound: e.theoretical_bound,
                probability_floor: e.probability_floor,
                violation_rate: e.violation_rate,
                allowed_violation_rate: e.allowed_violation_rate(),
                passes: e.passes(),
                median_deviation: e.median_deviation(),
                max_deviation: e.empirical_deviations.iter().copied().fold(0.0, f64::max),
                failed_replications: e.failed_replications,
            })
            .collect(),
    };
    io::write_json(&ld.path("bounds_summary.json"), &ld.envelope(out))?;
    if !report.inputs.applicable {
        eprintln!("warning: M > 1/(3 ln((n+p)/eps)); the bounds are outside their stated regime");
        return Ok(INAPPLICABLE);
    }
    Ok(0)
}

pub fn report(args: &CommonArgs) -> CmdResult<u8> {
    let ld: Loaded<ReportConfig> = load(args)?;
    let c = &ld.config;
    if c.designs.is_empty() || c.seeds.is_empty() {
        return Err(Failure::Config("report needs at least one design and one seed".into()));
    }
    let trace: TraceOptions = c.trace.unwrap_or_default();
    let mut t1_rows = Vec::new();
    let mut by_seed = Vec::new();
    let mut t2_rows = Vec::new();
    #[derive(Serialize)]
    struct DesignOut {
        label: String,
        summaries: Vec<NetworkSummary>,
        rows: Vec<Vec<DecompositionRow>>,
    }
    let mut designs_out = Vec::new();
    for d in &c.designs {
        let mut summaries = Vec::new();
        let mut runs = Vec::new();
        for &seed in &c.seeds {
            ld.log(format!("{} seed {seed}", d.label));
            let mut sbm = d.sbm.clone();
            sbm.seed = seed;
            let sim = run_simulation(&sbm, &d.dgp)?;
            let run = table_rows(&sim, &d.penalties, c.include_ols, trace)?;
            for r in &run.rows {
                by_seed.push(table2_record(&d.label, Some(seed), r));
            }
            summaries.push(sim.summary());
            runs.push(run.rows);
        }
        let k = summaries.len() as f64;
        let mean = |f: &dyn Fn(&NetworkSummary) -> f64| summaries.iter().map(f).sum::<f64>() / k;
        t1_rows.push(vec![
            d.label.clone(),
            d.sbm.p0.to_string(),
            mean(&|s| s.n_components as f64).to_string(),
            mean(&|s| s.p as f64).to_string(),
            mean(&|s| s.n as f64).to_string(),
            mean(&|s| s.n_obs as f64).to_string(),
            mean(&|s| s.sparsity).to_string(),
            mean(&|s| s.avg_worker_degree).to_string(),
            mean(&|s| s.avg_firm_degree).to_string(),
        ]);
        for (idx, first) in runs[0].iter().enumerate() {
            let rows: Vec<&DecompositionRow> = runs.iter().map(|r| &r[idx]).collect();
            t2_rows.push(table2_record(&d.label, None, &average_rows(&first.estimator, &rows)?));
        }
        designs_out.push(DesignOut { label: d.label.clone(), summaries, rows: runs });
    }
    let h = ld.header();
    io::write_rows(
        &ld.path("table1.csv"),
        &["design", "p0", "n_components", "p", "n", "N", "sparsity", "avg_worker_degree", "avg_firm_degree"],
        &t1_rows,
        &h,
    )?;
    let t2_cols = ["design", "seed", "estimator", "share_worker", "share_firm", "share_2cov", "share_residual", "fe_corr", "oos_mse", "lw_norm", "lf_norm"];
    io::write_rows(&ld.path("table2.csv"), &t2_cols, &t2_rows, &h)?;
    io::write_rows(&ld.path("table2_by_seed.csv"), &t2_cols, &by_seed, &h)?;
    io::write_json(&ld.path("report.json"), &ld.envelope(designs_out))?;
    Ok(0)
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => x.to_string(),
        _ => String::new(),
    }
}

fn table2_record(label: &str, seed: Option<u64>, r: &DecompositionRow) -> Vec<String> {
    let d = &r.decomposition;
    vec![
        label.to_string(),
        seed.map_or("mean".into(), |s| s.to_string()),
        r.estimator.clone(),
        d.share_worker.to_string(),
        d.share_firm.to_string(),
        d.share_2cov.to_string(),
        d.share_residual.to_string(),
        fmt_opt(Some(d.fe_correlation)),
        fmt_opt(r.oos_mse),
        fmt_opt(r.lw_norm),
        fmt_opt(r.lf_norm),
    ]
}

/// Seed-averaged row; undefined entries stay undefined when any seed lacks
/// them.
fn average_rows(estimator: &str, rows: &[&DecompositionRow]) -> CmdResult<DecompositionRow> {
    let k = rows.len() as f64;
    let avg = |f: &dyn Fn(&DecompositionRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / k;
    let avg_opt = |f: &dyn Fn(&DecompositionRow) -> Option<f64>| -> Option<f64> {
        rows.iter().map(|r| f(r)).sum::<Option<f64>>().map(|s| s / k)
    };
    let mut dec = rows[0].decomposition;
    dec.share_worker = avg(&|r| r.decomposition.share_worker);
    dec.share_firm = avg(&|r| r.decomposition.share_firm);
    dec.share_2cov = avg(&|r| r.decomposition.share_2cov);
    dec.share_residual = avg(&|r| r.decomposition.share_residual);
    dec.fe_correlation = avg(&|r| r.decomposition.fe_correlation);
    dec.total_variance = avg(&|r| r.decomposition.total_variance);
    Ok(DecompositionRow {
        estimator: estimator.to_string(),
        decomposition: dec,
        oos_mse: avg_opt(&|r| r.oos_mse),
        lw_norm: avg_opt(&|r| r.lw_norm),
        lf_norm: avg_opt(&|r| r.lf_norm),
    })
}
