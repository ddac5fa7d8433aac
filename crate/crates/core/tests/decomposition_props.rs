mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;
use ridgefe::decomposition::{
    cross_validate, decompose, decompose_effects, density_report, out_of_sample_mse, prediction_sse, simulate,
    silverman_bandwidth,
};
use ridgefe::estimator::{ols_fit, ridge_fit, DgpSpec, OutcomePanel};
use ridgefe::sbm::{draw_assignment, sample_edges, ExpectedNetwork};
use ridgefe::RidgePenalties;

/// Shares computed directly over observations.
fn direct_shares(panel: &OutcomePanel, mu: &[f64], phi: &[f64]) -> [f64; 4] {
    let rows: Vec<(f64, f64, f64)> = panel.rows().map(|(i, j, y)| (mu[i], phi[j], y)).collect();
    let n = rows.len() as f64;
    let mean = |f: &dyn Fn(&(f64, f64, f64)) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let (ma, mb, my) = (mean(&|r| r.0), mean(&|r| r.1), mean(&|r| r.2));
    let vy = mean(&|r| (r.2 - my).powi(2));
    let va = mean(&|r| (r.0 - ma).powi(2)) / vy;
    let vb = mean(&|r| (r.1 - mb).powi(2)) / vy;
    let c = 2.0 * mean(&|r| (r.0 - ma) * (r.1 - mb)) / vy;
    [va, vb, c, 1.0 - va - vb - c]
}

#[test]
fn decomposition_matches_direct_moments() {
    let mut r = rng(41);
    for _ in 0..20 {
        let g = random_connected_graph(&mut r, 30, 10, 40);
        let panel = random_panel(&mut r, &g);
        let fit = ridge_fit(&panel, RidgePenalties::new(1.0, 2.0).unwrap()).unwrap();
        let d = decompose(&panel, &fit).unwrap();
        let want = direct_shares(&panel, &fit.mu_hat, &fit.phi_hat);
        for (a, b) in d.shares().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((d.shares().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn ols_residual_share_is_rss_ratio() {
    let mut r = rng(42);
    for _ in 0..20 {
        let g = random_connected_graph(&mut r, 40, 12, 60);
        let panel = random_panel(&mut r, &g);
        let fit = ols_fit(&panel).unwrap();
        let d = decompose(&panel, &fit).unwrap();
        let n = panel.n_obs() as f64;
        let my = panel.y.iter().sum::<f64>() / n;
        let vy = panel.y.iter().map(|y| (y - my).powi(2)).sum::<f64>() / n;
        let rss: f64 = fit.residuals.iter().map(|e| e * e).sum();
        assert!((d.share_residual - rss / (n * vy)).abs() < 1e-10);
    }
}

#[test]
fn constant_effect_block_gives_zero_correlation() {
    let mut r = rng(43);
    let g = random_connected_graph(&mut r, 10, 4, 5);
    let panel = random_panel(&mut r, &g);
    let d = decompose_effects(&panel, &vec![1.0; 10], &[0.0, 1.0, 2.0, 3.0]).unwrap();
    assert_eq!(d.fe_correlation, 0.0);
    assert_eq!(d.share_worker, 0.0);
    let flat = OutcomePanel::new(g.clone(), vec![2.0; panel.n_obs()]).unwrap();
    assert!(decompose_effects(&flat, &vec![0.0; 10], &[0.0; 4]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn level_shifts_do_not_change_shares(seed in 0u64..10_000, a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let mut r = rng(seed);
        let g = random_connected_graph(&mut r, 12, 5, 15);
        let panel = random_panel(&mut r, &g);
        let mu: Vec<f64> = (0..12).map(|_| r.random_range(-1.0..1.0)).collect();
        let phi: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
        let base = decompose_effects(&panel, &mu, &phi).unwrap();
        let mu2: Vec<f64> = mu.iter().map(|m| m + a).collect();
        let phi2: Vec<f64> = phi.iter().map(|f| f + b).collect();
        let y2: Vec<f64> = panel.y.iter().map(|y| y + a + b).collect();
        let shifted = decompose_effects(&OutcomePanel::new(g.clone(), y2).unwrap(), &mu2, &phi2).unwrap();
        for (x, y) in base.shares().iter().zip(shifted.shares()) {
            prop_assert!((x - y).abs() < 1e-8);
        }
        prop_assert!((base.fe_correlation - shifted.fe_correlation).abs() < 1e-8);
    }
}

/// Exact expected prediction SSE from the full `(n+p)` moments:
/// `E[eᵀGe] + σ² Σ𝔅` with `G` the expected Gram matrix of a fresh network.
fn exact_sse(b_train: &DMatrix<f64>, b_exp: &DMatrix<f64>, lw: f64, lf: f64, spec: &DgpSpec, mu0: &[f64], phi0: &[f64]) -> (f64, [f64; 6]) {
    let (n, p) = (b_train.nrows(), b_train.ncols());
    let dm = DenseMoments::new(b_train.clone(), lw, lf);
    let (bm, bp) = dm.bias(mu0, phi0);
    let (vw, vf) = dm.variance(spec.sigma, spec.sigma_w, spec.sigma_f);
    // Cov(μ̂−μ, φ̂−φ) from the full inverse
    let mut gram = DMatrix::zeros(n + p, n + p);
    for i in 0..n {
        gram[(i, i)] = b_train.row(i).sum();
    }
    for j in 0..p {
        gram[(n + j, n + j)] = b_train.column(j).sum();
    }
    gram.view_mut((0, n), (n, p)).copy_from(b_train);
    gram.view_mut((n, 0), (p, n)).copy_from(&b_train.transpose());
    let lam = DVector::from_fn(n + p, |r, _| if r < n { lw } else { lf });
    let m = (&gram + DMatrix::from_diagonal(&lam)).try_inverse().unwrap();
    let sig = DVector::from_fn(n + p, |r, _| if r < n { spec.sigma_w.powi(2) } else { spec.sigma_f.powi(2) });
    let lm = DMatrix::from_diagonal(&lam);
    let full = &m * &gram * &m * spec.sigma.powi(2) + &m * &lm * DMatrix::from_diagonal(&sig) * &lm * &m;
    let cov = full.view((0, n), (n, p)).into_owned();
    let dw = DVector::from_fn(n, |i, _| b_exp.row(i).sum());
    let df = DVector::from_fn(p, |j, _| b_exp.column(j).sum());
    let terms = [
        bm.dot(&bm.component_mul(&dw)),
        (0..n).map(|i| dw[i] * vw[(i, i)]).sum::<f64>(),
        2.0 * bm.dot(&(b_exp * &bp)),
        2.0 * b_exp.component_mul(&cov).sum(),
        bp.dot(&bp.component_mul(&df)),
        (0..p).map(|j| df[j] * vf[(j, j)]).sum::<f64>(),
    ];
    (terms.iter().sum::<f64>() + spec.sigma.powi(2) * b_exp.sum(), terms)
}

#[test]
fn prediction_sse_matches_exact_moments() {
    let params = small_sbm(45, 15, 3, 8.0, 2.0, 3);
    let a = draw_assignment(&params).unwrap();
    let c = params.affinity_matrix();
    let g = sample_edges(&a, &c, 3, 0).unwrap().graph;
    let spec = DgpSpec { mu_star: vec![0.0, 1.0, 2.0], phi_star: vec![0.0, 0.4, 0.8], sigma: 1.0, sigma_w: 0.7, sigma_f: 0.5 };
    let (lw, lf) = (2.0, 3.0);
    let en = ExpectedNetwork::new(&a, &c, RidgePenalties::new(lw, lf).unwrap()).unwrap();
    let rep = prediction_sse(&g, &en, &spec, 4000, 17, 2000).unwrap();
    let mu0: Vec<f64> = a.worker_types.iter().map(|&k| spec.mu_star[k]).collect();
    let phi0: Vec<f64> = a.firm_types.iter().map(|&l| spec.phi_star[l]).collect();
    let b_exp = dense_expected(&a, &c);
    let (exact, terms) = exact_sse(&dense_b(&g), &b_exp, lw, lf, &spec, &mu0, &phi0);
    let got = [rep.bias_worker, rep.trace_worker, rep.bias_cross, rep.trace_cross, rep.bias_firm, rep.trace_firm];
    for k in [0, 1, 2, 4, 5] {
        assert!((got[k] - terms[k]).abs() < 1e-9 * (1.0 + terms[k].abs()), "term {k}: {} vs {}", got[k], terms[k]);
    }
    assert!((rep.noise - b_exp.sum()).abs() < 1e-10);
    assert!((rep.monte_carlo - exact).abs() < 3.0 * rep.monte_carlo_se, "{} vs {exact} (se {})", rep.monte_carlo, rep.monte_carlo_se);
    assert!((rep.total - exact).abs() < 3.0 * rep.monte_carlo_se);
    assert!((rep.trace_cross - terms[3]).abs() < 3.0 * rep.monte_carlo_se);

    // doubling β* quadruples the bias terms and leaves the traces alone
    let spec2 = DgpSpec { mu_star: spec.mu_star.iter().map(|v| 2.0 * v).collect(), phi_star: spec.phi_star.iter().map(|v| 2.0 * v).collect(), ..spec.clone() };
    let rep2 = prediction_sse(&g, &en, &spec2, 2, 17, 2000).unwrap();
    assert!((rep2.bias_worker - 4.0 * rep.bias_worker).abs() < 1e-9 * rep.bias_worker.abs().max(1.0));
    assert!((rep2.bias_firm - 4.0 * rep.bias_firm).abs() < 1e-9 * rep.bias_firm.abs().max(1.0));
    assert!((rep2.bias_cross - 4.0 * rep.bias_cross).abs() < 1e-9 * rep.bias_cross.abs().max(1.0));
    assert!((rep2.trace_worker - rep.trace_worker).abs() < 1e-12 * rep.trace_worker);
}

#[test]
fn kde_recovers_standard_normal() {
    let mut r = rng(44);
    let v: Vec<f64> = (0..10_000).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let rep = density_report(&v, 512).unwrap();
    let k = rep.x.iter().enumerate().min_by(|a, b| a.1.abs().total_cmp(&b.1.abs())).unwrap().0;
    let at0 = rep.density[k];
    let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    assert!((at0 - phi0).abs() < 0.1 * phi0, "{at0}");
    let dx = rep.x[1] - rep.x[0];
    let mass: f64 = rep.density.iter().sum::<f64>() * dx;
    assert!((mass - 1.0).abs() < 0.01);
    let h = silverman_bandwidth(&v);
    assert!((h - 0.9 * 10_000f64.powf(-0.2)).abs() < 0.05 * h);
    let same = density_report(&[3.0, 3.0, 3.0], 512).unwrap();
    assert_eq!(same.point_mass, Some(3.0));
}

#[test]
fn oos_mse_grows_with_added_noise() {
    let mut r = rng(45);
    let g = random_connected_graph(&mut r, 40, 10, 60);
    let train = random_panel(&mut r, &g);
    let fit = ridge_fit(&train, RidgePenalties::new(1.0, 1.0).unwrap()).unwrap();
    let fitted = fit.fitted(&train);
    let z: Vec<f64> = (0..train.n_obs()).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
    let mut last = -1.0;
    for s in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let y: Vec<f64> = fitted.iter().zip(&z).map(|(f, e)| f + s * e).collect();
        let test = OutcomePanel::with_mapping(g.clone(), y, train.mapping.clone()).unwrap();
        let rep = out_of_sample_mse(&train, &fit, &test).unwrap();
        assert_eq!(rep.dropped, 0);
        let want = z.iter().map(|e| (s * e).powi(2)).sum::<f64>() / z.len() as f64;
        assert!((rep.mse - want).abs() < 1e-10 * (1.0 + want));
        assert!(rep.mse > last);
        last = rep.mse;
    }
}

#[test]
fn cross_validation_picks_grid_argmin() {
    let params = small_sbm(300, 100, 3, 400.0, 40.0, 9);
    let spec = DgpSpec { mu_star: vec![0.0, 1.0, 2.0], phi_star: vec![0.0, 0.4, 0.8], sigma: 1.0, sigma_w: 1.0, sigma_f: 0.5 };
    let sim = simulate(&params, &spec).unwrap();
    let test = sim.test_panel(0).unwrap();
    let grid: Vec<RidgePenalties> =
        [0.3, 1.0, 3.0, 10.0].iter().flat_map(|&a| [0.3, 1.0, 3.0].map(|b| RidgePenalties::new(a, b).unwrap())).collect();
    let cv = cross_validate(&sim.panel, &test, &grid).unwrap();
    let mses: Vec<f64> = grid
        .iter()
        .map(|&l| out_of_sample_mse(&sim.panel, &ridge_fit(&sim.panel, l).unwrap(), &test).unwrap().mse)
        .collect();
    let k = (0..grid.len()).min_by(|&a, &b| mses[a].total_cmp(&mses[b])).unwrap();
    assert_eq!(cv.best, grid[k]);
    assert!((cv.best_mse - mses[k]).abs() < 1e-12);
}

#[test]
fn test_panels_share_effects_with_fresh_noise() {
    let params = small_sbm(600, 200, 3, 1200.0, 120.0, 12);
    let spec = DgpSpec { mu_star: vec![0.0, 1.0, 2.0], phi_star: vec![0.0, 0.4, 0.8], sigma: 2.0, sigma_w: 1.0, sigma_f: 1.0 };
    let sim = simulate(&params, &spec).unwrap();
    let t0 = sim.test_panel(0).unwrap();
    let t1 = sim.test_panel(1).unwrap();
    assert_ne!(t0.graph, t1.graph);
    assert_eq!(sim.test_panel(0).unwrap().y, t0.y);
    let resid: Vec<f64> = t0
        .rows()
        .map(|(i, j, y)| y - sim.dgp.mu[t0.mapping.workers[i]] - sim.dgp.phi[t0.mapping.firms[j]])
        .collect();
    let (m, sd) = mean_sd(&resid);
    let se = 2.0 / (resid.len() as f64).sqrt();
    assert!(m.abs() < 4.0 * se);
    assert!((sd - 2.0).abs() < 0.1);
    // the full sampled network carries Σ𝔅 rows on average
    let b = dense_expected(&sim.assignment, &sim.affinity);
    let want = b.sum();
    let var: f64 = b.iter().map(|p| p * (1.0 - p)).sum();
    let counts: Vec<f64> = (0..40)
        .map(|d| sample_edges(&sim.assignment, &sim.affinity, 12, 1000 + d).unwrap().graph.n_obs() as f64)
        .collect();
    let (mean, _) = mean_sd(&counts);
    assert!((mean - want).abs() < 4.0 * (var / 40.0).sqrt());
}
