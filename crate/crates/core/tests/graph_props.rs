mod common;

use common::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use ridgefe::graph::{normalized_adjacency, regularized_laplacians, Laplacian};
use ridgefe::linalg::{dense_spectrum, operator_norm, to_dense, PowerOptions};
use ridgefe::{BipartiteGraph, RidgePenalties, Side};

fn arb_edges() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize, i64)>)> {
    (1usize..12, 1usize..12).prop_flat_map(|(n, p)| {
        (Just(n), Just(p), prop::collection::vec((0..n, 0..p, 0i64..4), 0..40))
    })
}

proptest! {
    #[test]
    fn degrees_and_totals_match_edges((n, p, edges) in arb_edges()) {
        let g = BipartiteGraph::from_edges(n, p, &edges).unwrap();
        let mut dw = vec![0u64; n];
        let mut df = vec![0u64; p];
        for &(i, j, d) in &edges {
            dw[i] += d as u64;
            df[j] += d as u64;
        }
        prop_assert_eq!(g.worker_degrees(), &dw[..]);
        prop_assert_eq!(g.firm_degrees(), &df[..]);
        prop_assert_eq!(g.n_obs(), dw.iter().sum::<u64>());
        prop_assert!(g.edges().all(|(_, _, d)| d >= 1));
        let stored: u64 = g.edges().map(|(_, _, d)| d as u64).sum();
        prop_assert_eq!(stored, g.n_obs());
    }

    #[test]
    fn component_labels_follow_paths((n, p, edges) in arb_edges()) {
        let g = BipartiteGraph::from_edges(n, p, &edges).unwrap();
        let lab = g.connected_components();
        // union-find oracle over n + p nodes
        let mut parent: Vec<usize> = (0..n + p).collect();
        fn find(p: &mut Vec<usize>, x: usize) -> usize {
            let mut r = x;
            while p[r] != r { r = p[r]; }
            p[x] = r;
            r
        }
        for &(i, j, d) in &edges {
            if d > 0 {
                let (a, b) = (find(&mut parent, i), find(&mut parent, n + j));
                parent[a] = b;
            }
        }
        let node_label = |x: usize| if x < n { lab.worker_component[x] } else { lab.firm_component[x - n] };
        for x in 0..n + p {
            for y in 0..n + p {
                let same = find(&mut parent, x) == find(&mut parent, y);
                prop_assert_eq!(same, node_label(x) == node_label(y));
            }
        }
        let labels: std::collections::BTreeSet<usize> = (0..n + p).map(node_label).collect();
        prop_assert_eq!(labels.into_iter().collect::<Vec<_>>(), (0..lab.n_components()).collect::<Vec<_>>());
    }

    #[test]
    fn largest_component_is_idempotent((n, p, edges) in arb_edges()) {
        let g = BipartiteGraph::from_edges(n, p, &edges).unwrap();
        prop_assume!(g.n_obs() > 0);
        let (sub, _) = g.largest_component().unwrap();
        prop_assert!(sub.is_connected());
        let (again, map) = sub.largest_component().unwrap();
        prop_assert_eq!(again.n_obs(), sub.n_obs());
        prop_assert_eq!(map.workers, (0..sub.n_workers()).collect::<Vec<_>>());
        prop_assert_eq!(map.firms, (0..sub.n_firms()).collect::<Vec<_>>());
    }

    #[test]
    fn normalized_adjacency_matches_elementwise(seed in 0u64..1000, lw in 0.0f64..5.0, lf in 0.0f64..5.0) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, 5, 4, 0.4);
        let pen = RidgePenalties::new(lw, lf).unwrap();
        let e = to_dense(&normalized_adjacency(&g, pen).unwrap());
        let b = dense_b(&g);
        for i in 0..5 {
            for j in 0..4 {
                let want = b[(i, j)] / ((b.row(i).sum() + lw) * (b.column(j).sum() + lf)).sqrt();
                prop_assert!((e[(i, j)] - want).abs() <= 1e-14);
            }
        }
    }
}

#[test]
fn lemma1_eigenvalues_in_unit_interval() {
    let mut r = rng(11);
    for _ in 0..200 {
        let (n, p) = (r.random_range(2..40), r.random_range(2..30));
        let density = r.random_range(0.02..0.4);
        let g = random_graph(&mut r, n, p, density);
        let e = to_dense(&normalized_adjacency(&g, RidgePenalties::zero()).unwrap());
        let af = e.transpose() * &e;
        for v in dense_spectrum(&af, 2000).unwrap() {
            assert!((-1e-10..=1.0 + 1e-10).contains(&v), "eigenvalue {v}");
        }
    }
}

#[test]
fn lemma2_zero_multiplicity_equals_components() {
    let mut r = rng(12);
    for _ in 0..200 {
        let parts = r.random_range(2..=6);
        let mut edges = Vec::new();
        let (mut n, mut p) = (0, 0);
        for _ in 0..parts {
            let (ni, pi) = (r.random_range(1..6), r.random_range(1..6));
            let extra = r.random_range(0..6);
            let sub = random_connected_graph(&mut r, ni, pi, extra);
            edges.extend(sub.edges().map(|(i, j, d)| (i + n, j + p, d as i64)));
            n += ni;
            p += pi;
        }
        let g = BipartiteGraph::from_edges(n, p, &edges).unwrap();
        assert_eq!(g.connected_components().n_components(), parts);
        let lf = Laplacian::new(&g, RidgePenalties::zero(), Side::Firm, true).unwrap();
        let zeros = dense_spectrum(&lf, 2000).unwrap().iter().filter(|v| v.abs() < 1e-9).count();
        assert_eq!(zeros, parts);
        let lw = Laplacian::new(&g, RidgePenalties::zero(), Side::Worker, true).unwrap();
        let zeros = dense_spectrum(&lw, 2000).unwrap().iter().filter(|v| v.abs() < 1e-9).count();
        assert_eq!(zeros, parts);
    }
}

#[test]
fn lemma1_null_vector_is_sqrt_degrees() {
    let mut r = rng(13);
    for _ in 0..20 {
        let g = random_connected_graph(&mut r, 8, 6, 10);
        let l = to_dense(&Laplacian::new(&g, RidgePenalties::zero(), Side::Firm, true).unwrap());
        let v = nalgebra::DVector::from_iterator(6, g.firm_degrees().iter().map(|&d| (d as f64).sqrt()));
        assert!((&l * &v).norm() < 1e-12 * v.norm());
    }
}

#[test]
fn lemma3_regularized_floor() {
    let mut r = rng(14);
    for _ in 0..200 {
        let (n, p) = (r.random_range(1..30), r.random_range(1..30));
        let density = r.random_range(0.02..0.5);
        let g = random_graph(&mut r, n, p, density);
        let (lw, lf) = (r.random_range(0.01..20.0), r.random_range(0.01..20.0));
        let pen = RidgePenalties::new(lw, lf).unwrap();
        let ls = regularized_laplacians(&g, pen).unwrap();
        let fmin = dense_spectrum(&ls.firm, 2000).unwrap()[0];
        let wmin = dense_spectrum(&ls.worker, 2000).unwrap()[0];
        assert!(fmin >= lf / (g.max_firm_degree() as f64 + lf) - 1e-12);
        assert!(wmin >= lw / (g.max_worker_degree() as f64 + lw) - 1e-12);
        let e = normalized_adjacency(&g, pen).unwrap();
        let norm = operator_norm(&e, PowerOptions::default()).value;
        let dmax = g.max_firm_degree() as f64;
        assert!(norm <= (dmax / (dmax + lf)).sqrt() + 1e-8);
    }
}

#[test]
fn unnormalized_laplacian_two_ways() {
    let mut r = rng(15);
    for _ in 0..40 {
        let (n, p) = (r.random_range(1..180), r.random_range(1..120));
        let g = random_graph(&mut r, n, p, 0.03);
        let (lw, lf) = (r.random_range(0.1..5.0), r.random_range(0.1..5.0));
        let pen = RidgePenalties::new(lw, lf).unwrap();
        let ls = regularized_laplacians(&g, pen).unwrap();
        let b = dense_b(&g);
        let dw: Vec<f64> = (0..n).map(|i| b.row(i).sum() + lw).collect();
        let df: Vec<f64> = (0..p).map(|j| b.column(j).sum() + lf).collect();
        let schur_f = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(df.clone()))
            - b.transpose() * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, dw.iter().map(|d| 1.0 / d))) * &b;
        let lt = to_dense(&ls.firm);
        let scaled_f = DMatrix::from_fn(p, p, |a, c| df[a].sqrt() * lt[(a, c)] * df[c].sqrt());
        assert!(max_abs_diff(&schur_f, &scaled_f) <= 1e-12 * (1.0 + max_abs(&schur_f)));
        assert!(max_abs_diff(&schur_f, &to_dense(&ls.firm_unnormalized)) <= 1e-12 * (1.0 + max_abs(&schur_f)));
        let schur_w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(dw.clone()))
            - &b * DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(p, df.iter().map(|d| 1.0 / d))) * b.transpose();
        assert!(max_abs_diff(&schur_w, &to_dense(&ls.worker_unnormalized)) <= 1e-12 * (1.0 + max_abs(&schur_w)));
    }
}

#[test]
fn operator_norm_matches_dense_svd() {
    let mut r = rng(16);
    for _ in 0..20 {
        let m = DMatrix::from_fn(30, 20, |_, _| if r.random::<f64>() < 0.15 { r.random_range(-2.0..2.0) } else { 0.0 });
        let want = m.singular_values().max();
        let got = operator_norm(&m, PowerOptions { tol: 1e-12, max_iter: 100_000 });
        assert!(got.converged);
        assert!((got.value - want).abs() <= 1e-6 * want.max(1.0), "{} vs {want}", got.value);
    }
}

#[test]
fn dense_spectrum_refuses_above_cap() {
    let m = DMatrix::<f64>::identity(5, 5);
    assert!(dense_spectrum(&m, 4).is_err());
    assert_eq!(dense_spectrum(&DMatrix::<f64>::identity(3, 3), 2000).unwrap(), vec![1.0; 3]);
}
