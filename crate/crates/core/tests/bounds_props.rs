mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use ridgefe::bounds::{bound_t, remark_penalty, BoundExperiment, BoundInputs, BoundKind};
use ridgefe::estimator::DgpSpec;
use ridgefe::{RidgePenalties, Side};

/// Scalars of the concentration statements, named as in the text: `dl` the
/// minimum and `du` the maximum expected degree of a side.
#[derive(Debug, Clone, Copy)]
struct Text {
    n: f64,
    p: f64,
    eps: f64,
    lw: f64,
    lf: f64,
    dl_w: f64,
    du_w: f64,
    dl_f: f64,
    du_f: f64,
}

impl Text {
    fn t(&self) -> f64 {
        let m = (1.0 / (self.dl_w + self.lw)).max(1.0 / (self.dl_f + self.lf));
        (3.0 * m * ((self.n + self.p) / self.eps).ln()).sqrt()
    }
    fn k(&self, side: Side) -> f64 {
        // 5 + 16 (δ̄+λ)/(δ̲+λ)
        match side {
            Side::Worker => 5.0 + 16.0 * (self.du_w + self.lw) / (self.dl_w + self.lw),
            Side::Firm => 5.0 + 16.0 * (self.du_f + self.lf) / (self.dl_f + self.lf),
        }
    }
    fn chi_w(&self) -> f64 {
        f64::max(1.0, self.du_f / (self.dl_w + self.lw))
    }
    fn chi_f(&self) -> f64 {
        f64::max(1.0, self.du_w / (self.dl_f + self.lf))
    }
    fn inverse(&self, side: Side) -> f64 {
        let (du, l) = match side {
            Side::Worker => (self.du_w, self.lw),
            Side::Firm => (self.du_f, self.lf),
        };
        16.0 * self.t() * ((du + l) / l) * ((du + l) / l)
    }
    fn unnormalized(&self, side: Side) -> f64 {
        let (du, l) = match side {
            Side::Worker => (self.du_w, self.lw),
            Side::Firm => (self.du_f, self.lf),
        };
        self.k(side) * (du + l) / (l * l) * self.t()
    }
    fn bias_mu(&self, mu: f64, phi: f64) -> f64 {
        let (lw, lf, t) = (self.lw, self.lf, self.t());
        let a = self.du_w + lw;
        let first = self.k(Side::Worker) * a / lw.powi(2) * t
            * (lw * self.n.sqrt() * mu + lf * (a / (self.dl_f + lf)).sqrt() * self.p.sqrt() * phi);
        let second = 2.0 * lf * a / lw.powi(2) * (self.chi_f().sqrt() + 2.0 * (a / lf).sqrt()) * t * self.p.sqrt() * phi;
        first + second
    }
    fn bias_phi(&self, mu: f64, phi: f64) -> f64 {
        let (lw, lf, t) = (self.lw, self.lf, self.t());
        let a = self.du_f + lf;
        let first = self.k(Side::Firm) * a / lf.powi(2) * t
            * (lf * self.p.sqrt() * phi + lw * (a / (self.dl_w + lw)).sqrt() * self.n.sqrt() * mu);
        let second = 2.0 * lw * a / lf.powi(2) * (self.chi_w().sqrt() + 2.0 * (a / lw).sqrt()) * t * self.n.sqrt() * mu;
        first + second
    }
    fn var_w(&self, s: f64, sw: f64, sf: f64) -> f64 {
        let (lw, lf, t) = (self.lw, self.lf, self.t());
        let kw = self.k(Side::Worker);
        let a = self.du_w + lw;
        let term1 = s * s * kw * a / lw.powi(2) * t;
        let term2 = (lw * lw * sw * sw - lw * s * s).abs() * (2.0 / lw + 1.0 / (self.dl_w + lw)) * kw * a * a / lw.powi(3) * t;
        let bracket = kw * (a / (self.dl_f + lf)).sqrt() + 2.0 * (self.chi_w().sqrt() + 2.0 * ((self.du_f + lf) / lw).sqrt());
        let term3 = (lf * lf * sf * sf - lf * s * s).abs()
            * (4.0 / lw * (1.0 / lf).sqrt() + 1.0 / (self.dl_w + lw) * (1.0 / (self.dl_f + lf)).sqrt())
            * a.powf(2.5)
            / lw.powi(3)
            * bracket
            * t;
        term1 + term2 + term3
    }
    fn var_f(&self, s: f64, sw: f64, sf: f64) -> f64 {
        let (lw, lf, t) = (self.lw, self.lf, self.t());
        let kf = self.k(Side::Firm);
        let a = self.du_f + lf;
        let term1 = s * s * kf * a / lf.powi(2) * t;
        let term2 = (lf * lf * sf * sf - lf * s * s).abs() * (2.0 / lf + 1.0 / (self.dl_f + lf)) * kf * a * a / lf.powi(3) * t;
        let bracket = kf * (a / (self.dl_w + lw)).sqrt() + 2.0 * (self.chi_w().sqrt() + 2.0 * ((self.du_f + lf) / lw).sqrt());
        let term3 = (lw * lw * sw * sw - lw * s * s).abs()
            * (4.0 / lf * (1.0 / lw).sqrt() + 1.0 / (self.dl_f + lf) * (1.0 / (self.dl_w + lw)).sqrt())
            * a.powf(2.5)
            / lf.powi(3)
            * bracket
            * t;
        term1 + term2 + term3
    }

    fn inputs(&self) -> BoundInputs {
        BoundInputs::from_scalars(
            self.n as usize,
            self.p as usize,
            RidgePenalties::new(self.lw, self.lf).unwrap(),
            self.eps,
            (self.dl_w, self.du_w),
            (self.dl_f, self.du_f),
        )
        .unwrap()
    }
}

fn arb_text() -> impl Strategy<Value = Text> {
    (1usize..5000, 1usize..5000, 1e-6f64..0.5, 0.01f64..500.0, 0.01f64..500.0, 0.0f64..50.0, 0.0f64..50.0, 0.0f64..50.0, 0.0f64..50.0)
        .prop_map(|(n, p, eps, lw, lf, a, b, c, d)| Text {
            n: n as f64,
            p: p as f64,
            eps,
            lw,
            lf,
            dl_w: a.min(b),
            du_w: a.max(b),
            dl_f: c.min(d),
            du_f: c.max(d),
        })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * b.abs().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn bound_formulas_agree_with_text(x in arb_text(), mu in 0.0f64..10.0, phi in 0.0f64..10.0,
                                      s in 0.0f64..5.0, sw in 0.0f64..5.0, sf in 0.0f64..5.0) {
        let i = x.inputs();
        prop_assert!(close(i.t, x.t()));
        prop_assert!(close(i.thm1_adjacency(), 4.0 * x.t()));
        prop_assert!(close(i.thm1_laplacian(), 8.0 * x.t()));
        for side in [Side::Worker, Side::Firm] {
            prop_assert!(close(i.thm2(side), x.inverse(side)));
            prop_assert!(close(i.thm3(side), x.unnormalized(side)));
        }
        prop_assert!(close(i.thm4(Side::Worker, mu, phi), x.bias_mu(mu, phi)));
        prop_assert!(close(i.thm4(Side::Firm, mu, phi), x.bias_phi(mu, phi)));
        prop_assert!(close(i.thm5(Side::Worker, s, sw, sf), x.var_w(s, sw, sf)));
        prop_assert!(close(i.thm5(Side::Firm, s, sw, sf), x.var_f(s, sw, sf)));
        let log = ((x.n + x.p) / x.eps).ln();
        let m = (1.0 / (x.dl_w + x.lw)).max(1.0 / (x.dl_f + x.lf));
        prop_assert_eq!(i.applicable, 3.0 * m * log <= 1.0 + 1e-12);
        if i.applicable {
            prop_assert!(i.t <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn bias_bound_is_homogeneous(x in arb_text(), mu in 0.0f64..10.0, phi in 0.0f64..10.0, c in 0.0f64..20.0) {
        let i = x.inputs();
        for side in [Side::Worker, Side::Firm] {
            let a = i.thm4(side, c * mu, c * phi);
            let b = c * i.thm4(side, mu, phi);
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-300));
        }
    }
}

#[test]
fn probability_floors() {
    let x = Text { n: 300.0, p: 100.0, eps: 0.01, lw: 5.0, lf: 5.0, dl_w: 1.0, du_w: 2.0, dl_f: 1.0, du_f: 4.0 };
    let i = x.inputs();
    let g = 1.0 / 3.0;
    let want = [
        (BoundKind::Adjacency, (3.0 + 4.0 * g) / (1.0 + g)),
        (BoundKind::Laplacian(Side::Worker), (3.0 + 4.0 * g) / (1.0 + g)),
        (BoundKind::LaplacianInverse(Side::Firm), (3.0 + 5.0 * g) / (1.0 + g)),
        (BoundKind::LaplacianInverse(Side::Worker), 4.0),
        (BoundKind::UnnormalizedInverse(Side::Firm), (3.0 + 9.0 * g) / (1.0 + g)),
        (BoundKind::UnnormalizedInverse(Side::Worker), (8.0 + 4.0 * g) / (1.0 + g)),
        (BoundKind::Bias(Side::Worker), (11.0 + 7.0 * g) / (1.0 + g)),
        (BoundKind::Bias(Side::Firm), (6.0 + 12.0 * g) / (1.0 + g)),
        (BoundKind::Variance(Side::Worker), (13.0 + 6.0 * g) / (1.0 + g)),
        (BoundKind::Variance(Side::Firm), (5.0 + 13.0 * g) / (1.0 + g)),
    ];
    for (kind, coef) in want {
        assert!((i.probability_floor(kind) - (1.0 - coef * 0.01)).abs() < 1e-14, "{kind:?}");
    }
}

/// Grid check: with λ beyond the largest expected degree, each bound is
/// non-increasing per coordinate (theorems 1–3) or along the diagonal
/// (theorems 4–5).
#[test]
fn bounds_shrink_with_penalty() {
    let base = Text { n: 600.0, p: 200.0, eps: 0.05, lw: 0.0, lf: 0.0, dl_w: 0.8, du_w: 3.5, dl_f: 0.5, du_f: 20.0 };
    let dmax = base.du_w.max(base.du_f);
    let grid: Vec<f64> = (0..40).map(|k| dmax * 1.15f64.powi(k)).collect();
    let at = |lw: f64, lf: f64| Text { lw, lf, ..base }.inputs();
    let per_coord = |f: &dyn Fn(&BoundInputs) -> f64| {
        for &a in &grid {
            for w in grid.windows(2) {
                assert!(f(&at(w[1], a)) <= f(&at(w[0], a)) * (1.0 + 1e-12));
                assert!(f(&at(a, w[1])) <= f(&at(a, w[0])) * (1.0 + 1e-12));
            }
        }
    };
    per_coord(&|i| i.thm1_adjacency());
    per_coord(&|i| i.thm1_laplacian());
    for side in [Side::Worker, Side::Firm] {
        per_coord(&|i| i.thm2(side));
        per_coord(&|i| i.thm3(side));
    }
    for w in grid.windows(2) {
        let (a, b) = (at(w[0], w[0]), at(w[1], w[1]));
        for side in [Side::Worker, Side::Firm] {
            assert!(b.thm4(side, 2.0, 1.0) <= a.thm4(side, 2.0, 1.0) * (1.0 + 1e-12));
            assert!(b.thm5(side, 2.0, 1.4, 1.0) <= a.thm5(side, 2.0, 1.4, 1.0) * (1.0 + 1e-12));
        }
    }
}

#[test]
fn variance_bound_special_cases() {
    let x = Text { n: 300.0, p: 100.0, eps: 0.01, lw: 30.0, lf: 20.0, dl_w: 1.0, du_w: 2.0, dl_f: 1.0, du_f: 4.0 };
    let i = x.inputs();
    for side in [Side::Worker, Side::Firm] {
        assert_eq!(i.thm5(side, 0.0, 0.0, 0.0), 0.0);
    }
    // σ_w² = σ²/λ_w and σ_f² = σ²/λ_f cancel both sandwich terms
    let s: f64 = 2.0;
    let (sw, sf) = (s / x.lw.sqrt(), s / x.lf.sqrt());
    let k = 5.0 + 16.0 * 32.0 / 31.0;
    assert!((i.thm5(Side::Worker, s, sw, sf) - 4.0 * k * 32.0 / 900.0 * i.t).abs() < 1e-12);
    assert!(i.thm4(Side::Worker, 0.0, 0.0) == 0.0);
}

#[test]
fn remark_penalty_makes_bounds_applicable() {
    for &(n, p) in &[(10usize, 5usize), (600, 200), (90_000, 30_000)] {
        for &nu in &[0.1, 0.5, 0.9] {
            let pen = remark_penalty(n, p, nu).unwrap();
            let eps = ((n + p) as f64).powf(-nu);
            let i = BoundInputs::from_scalars(n, p, pen, eps, (0.0, 1.0), (0.0, 1.0)).unwrap();
            assert!(i.applicable);
            // zero minimum degree puts the condition exactly at its boundary
            assert!((i.t - 1.0).abs() < 1e-12);
        }
    }
}

/// Each reported deviation against a dense spectral norm on a small design.
#[test]
fn deviations_match_dense_norms() {
    let params = small_sbm(60, 24, 3, 12.0, 3.0, 5);
    let dgp = DgpSpec { mu_star: vec![0.0, 1.0, 2.0], phi_star: vec![0.0, 0.4, 0.8], sigma: 1.0, sigma_w: 0.5, sigma_f: 0.5 };
    let pen = RidgePenalties::new(4.0, 3.0).unwrap();
    let exp = BoundExperiment::new(&params, pen, 0.05, Some(dgp.clone())).unwrap();
    let inputs = bound_t(&exp.expected, 0.05).unwrap();
    assert_eq!(inputs, exp.inputs);
    let kinds: Vec<BoundKind> = (1..=5).flat_map(BoundKind::for_theorem).collect();
    let b_exp = dense_expected(&exp.assignment, &params.affinity_matrix());
    for r in 0..3 {
        let g = exp.network(r).unwrap();
        let dev = exp.deviations(&g, &kinds).unwrap();
        assert!(dev.failed.is_empty());
        let get = |k: BoundKind| dev.values.iter().find(|(kk, _)| *kk == k).unwrap().1;
        let b = dense_b(&g);
        let norm = |m: DMatrix<f64>| m.singular_values().max();
        let e = normalize(&b, 4.0, 3.0);
        let ee = normalize(&b_exp, 4.0, 3.0);
        assert!((get(BoundKind::Adjacency) - norm(&e - &ee)).abs() < 1e-6);
        let lf = DMatrix::identity(24, 24) - e.transpose() * &e;
        let lfe = DMatrix::identity(24, 24) - ee.transpose() * &ee;
        assert!((get(BoundKind::Laplacian(Side::Firm)) - norm(&lf - &lfe)).abs() < 1e-6);
        let inv = |m: &DMatrix<f64>| m.clone().try_inverse().unwrap();
        assert!((get(BoundKind::LaplacianInverse(Side::Firm)) - norm(inv(&lf) - inv(&lfe))).abs() < 1e-6);
        let (mw, mw_e) = (DenseMoments::new(b.clone(), 4.0, 3.0), DenseMoments::new(b_exp.clone(), 4.0, 3.0));
        assert!((get(BoundKind::UnnormalizedInverse(Side::Worker)) - norm(&mw.lt_w_inv - &mw_e.lt_w_inv)).abs() < 1e-6);
        let mu: Vec<f64> = exp.assignment.worker_types.iter().map(|&k| dgp.mu_star[k]).collect();
        let phi: Vec<f64> = exp.assignment.firm_types.iter().map(|&l| dgp.phi_star[l]).collect();
        let (bm, _) = mw.bias(&mu, &phi);
        let (bme, _) = mw_e.bias(&mu, &phi);
        assert!((get(BoundKind::Bias(Side::Worker)) - (bm - bme).norm()).abs() < 1e-8);
        let (_, vf) = mw.variance(1.0, 0.5, 0.5);
        let (_, vfe) = mw_e.variance(1.0, 0.5, 0.5);
        assert!((get(BoundKind::Variance(Side::Firm)) - sym_spectral_norm(&(vf - vfe))).abs() < 1e-8);
    }
}

fn normalize(b: &DMatrix<f64>, lw: f64, lf: f64) -> DMatrix<f64> {
    DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| b[(i, j)] / ((b.row(i).sum() + lw) * (b.column(j).sum() + lf)).sqrt())
}
