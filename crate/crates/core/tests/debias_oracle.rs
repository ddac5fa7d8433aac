//! Dense oracle for the homoscedastic correction of OLS variance components.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ridgefe::estimator::{debiased_quadratics, effect_moments, ols_fit, OutcomePanel, TraceOptions};
use ridgefe::BipartiteGraph;

fn random_connected_panel(rng: &mut ChaCha8Rng, n: usize, p: usize, extra: usize) -> OutcomePanel {
    let mut edges = Vec::new();
    // spanning path over alternating workers and firms
    for i in 0..n {
        edges.push((i, i % p, 1i64));
        if i + 1 < n {
            edges.push((i + 1, i % p, 1));
        }
    }
    for j in 0..p {
        edges.push((j % n, j, 1));
    }
    for _ in 0..extra {
        edges.push((rng.random_range(0..n), rng.random_range(0..p), 1));
    }
    let g = BipartiteGraph::from_edges(n, p, &edges).unwrap();
    let y = (0..g.n_obs()).map(|_| rng.random::<f64>() * 3.0).collect();
    OutcomePanel::new(g, y).unwrap()
}

/// `σ̂² tr(Q S)` by brute force with the pinned design.
fn dense_corrections(panel: &OutcomePanel, sigma2: f64) -> [f64; 3] {
    let g = &panel.graph;
    let (n, p, nn) = (g.n_workers(), g.n_firms(), panel.n_obs());
    let mut w = DMatrix::zeros(nn, n);
    let mut f = DMatrix::zeros(nn, p);
    for (r, (i, j)) in g.observations().enumerate() {
        w[(r, i)] = 1.0;
        f[(r, j)] = 1.0;
    }
    // drop firm 0
    let f1 = f.columns(1, p - 1).into_owned();
    let mut x = DMatrix::zeros(nn, n + p - 1);
    x.columns_mut(0, n).copy_from(&w);
    x.columns_mut(n, p - 1).copy_from(&f1);
    let s = (x.transpose() * &x).try_inverse().unwrap();
    let m = DMatrix::identity(nn, nn) - DMatrix::from_element(nn, nn, 1.0 / nn as f64);
    let nf = nn as f64;
    let qww = w.transpose() * &m * &w / nf;
    let qff = f1.transpose() * &m * &f1 / nf;
    let qwf = w.transpose() * &m * &f1 / nf;
    let sww = s.view((0, 0), (n, n));
    let sff = s.view((n, n), (p - 1, p - 1));
    let sfw = s.view((n, 0), (p - 1, n));
    [
        sigma2 * (qww * sww).trace(),
        sigma2 * (qff * sff).trace(),
        sigma2 * (qwf * sfw).trace(),
    ]
}

#[test]
fn corrections_match_dense_traces() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..30 {
        let n = rng.random_range(2..12);
        let p = rng.random_range(2..8);
        let extra = rng.random_range(n + p..3 * (n + p));
        let panel = random_connected_panel(&mut rng, n, p, extra);
        let fit = ols_fit(&panel).unwrap();
        let Ok(comp) = debiased_quadratics(&panel, &fit, TraceOptions::default()) else { continue };
        assert!(comp.exact_trace);
        let want = dense_corrections(&panel, comp.sigma2_hat);
        for k in 0..3 {
            let tol = 1e-9 * (1.0 + want[k].abs());
            assert!((comp.corrections[k] - want[k]).abs() < tol, "case {case} k {k}: {} vs {}", comp.corrections[k], want[k]);
        }
        let plug = effect_moments(&panel, &fit.mu_hat, &fit.phi_hat);
        assert_eq!(plug, comp.plug_in);
    }
}

#[test]
fn hutchinson_trace_close_to_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let panel = random_connected_panel(&mut rng, 60, 30, 150);
    let fit = ols_fit(&panel).unwrap();
    let exact = debiased_quadratics(&panel, &fit, TraceOptions::default()).unwrap();
    let probed = debiased_quadratics(&panel, &fit, TraceOptions { dense_cap: 0, probes: 4000, seed: 1 }).unwrap();
    assert!(!probed.exact_trace);
    for k in 0..3 {
        let scale = exact.corrections.iter().map(|c| c.abs()).fold(0.0, f64::max);
        assert!((exact.corrections[k] - probed.corrections[k]).abs() < 0.05 * scale);
    }
}
