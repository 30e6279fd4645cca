mod common;

use common::{random_digraph, random_matrix, Dense};
use dhse::cs::{correct_and_smooth, propagate, spread, smooth, CsConfig, LabelState, NormalizedAdjacency};
use dhse::dataset::Split;
use dhse::graph::Graph;
use dhse::model::{argmax_rows, softmax_rows};
use nalgebra::DMatrix;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `D^{-1/2} A D^{-1/2}` built straight from the dense adjacency.
fn dense_s(d: &Dense) -> DMatrix<f64> {
    let deg: Vec<f64> = (0..d.n).map(|v| d.degree(v) as f64).collect();
    DMatrix::from_fn(d.n, d.n, |i, j| {
        if d.adj[i][j] {
            1.0 / (deg[i] * deg[j]).sqrt()
        } else {
            0.0
        }
    })
}

fn to_dm(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Solves `(I − αS) X = (1 − α) B` by LU.
fn solve(s: &DMatrix<f64>, b: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let n = s.nrows();
    let m = DMatrix::identity(n, n) - s * alpha;
    m.lu().solve(&(b * (1.0 - alpha))).expect("nonsingular for alpha < 1")
}

fn small_graphs(rng: &mut ChaCha8Rng) -> Vec<(usize, Vec<(u32, u32)>)> {
    let mut out: Vec<_> = common::named_graphs().into_iter().map(|(_, n, e)| (n, e)).collect();
    out.push((2, vec![(0, 1)]));
    out.push((1, vec![]));
    for _ in 0..60 {
        let n = rng.gen_range(2..=10);
        let p = rng.gen_range(0.1..0.7);
        out.push((n, random_digraph(n, p, 0.1, rng)));
    }
    out
}

#[test]
fn fixed_points_match_dense_solves() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for (n, edges) in small_graphs(&mut rng) {
        let g = Graph::from_edges(n, &edges).unwrap();
        let d = Dense::new(n, &edges);
        let s = NormalizedAdjacency::from_graph(&g);
        let s_dense = dense_s(&d);
        assert!((to_dm(&s.to_dense()) - &s_dense).amax() < 1e-15);
        for alpha in [0.1, 0.5, 0.8, 0.9, 0.95] {
            let b = random_matrix(n, 3, &mut rng);
            let it = propagate(&b, &s, alpha, 10_000, 1e-13);
            let exact = solve(&s_dense, &to_dm(&b), alpha);
            let err = (to_dm(&it.result) - exact).amax();
            assert!(err < 1e-8, "n={n} alpha={alpha}: {err:e}");
        }
    }
}

#[test]
fn spectral_radius_at_most_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (n, edges) in small_graphs(&mut rng) {
        let g = Graph::from_edges(n, &edges).unwrap();
        let s = NormalizedAdjacency::from_graph(&g);
        // S is symmetric, so power iteration on S² converges to ρ(S)²
        let mut x = random_matrix(n, 1, &mut rng).mapv(f64::abs) + 0.1;
        let mut rho2 = 0.0;
        for _ in 0..500 {
            let y = s.apply(&s.apply(&x));
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let xn = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            rho2 = norm / xn;
            if norm == 0.0 {
                break;
            }
            x = y / norm;
        }
        assert!(rho2.sqrt() <= 1.0 + 1e-9, "n={n}: {rho2}");
        let dense = s.to_dense();
        assert_eq!(dense, dense.t());
    }
}

fn random_state(n: usize, c: usize, rng: &mut ChaCha8Rng) -> (LabelState, Vec<usize>) {
    let z = softmax_rows(&(random_matrix(n, c, rng) * 3.0));
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
    let mut ids: Vec<usize> = (0..n).collect();
    ids.shuffle(rng);
    let (t, v) = (n / 2, n / 4);
    let split = Split {
        train: ids[..t].to_vec(),
        valid: ids[t..t + v].to_vec(),
        test: ids[t + v..].to_vec(),
    };
    (LabelState::new(z, &labels, &split).unwrap(), labels)
}

#[test]
fn full_pipeline_matches_dense_solves() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (n, edges) in small_graphs(&mut rng).into_iter().filter(|(n, _)| *n >= 4) {
        let g = Graph::from_edges(n, &edges).unwrap();
        let s_dense = dense_s(&Dense::new(n, &edges));
        let (state, _) = random_state(n, 3, &mut rng);
        let cfg = CsConfig::default();
        let out = correct_and_smooth(&state, &NormalizedAdjacency::from_graph(&g), &cfg).unwrap();

        let mut e = DMatrix::zeros(n, 3);
        for &i in &state.train {
            for c in 0..3 {
                e[(i, c)] = state.z[[i, c]] - state.y[[i, c]];
            }
        }
        let e_hat = solve(&s_dense, &e, cfg.alpha_correct);
        let z_r = to_dm(&state.z) + e_hat * cfg.scale;
        let mut anchor = z_r.clone();
        for &i in &state.train {
            for c in 0..3 {
                anchor[(i, c)] = state.y[[i, c]];
            }
        }
        let g_star = solve(&s_dense, &anchor, cfg.alpha_smooth);
        assert!((to_dm(&out.corrected) - z_r).amax() < 1e-8);
        assert!((to_dm(&out.smoothed.result) - &g_star).amax() < 1e-8);
        assert!(out.spread.residual < cfg.tol && out.smoothed.residual < cfg.tol);
    }
}

#[test]
fn residuals_shrink_geometrically() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let edges = random_digraph(40, 0.2, 0.0, &mut rng);
    let g = Graph::from_edges(40, &edges).unwrap();
    let s = NormalizedAdjacency::from_graph(&g);
    let b = random_matrix(40, 4, &mut rng);
    for alpha in [0.5, 0.9, 0.95] {
        let mut prev = f64::INFINITY;
        for iters in [5, 10, 20, 40] {
            let r = spread(&b, &s, alpha, iters, 0.0).residual;
            assert!(r <= prev * alpha.powi(5) * 1.0001 || r < 1e-15, "alpha {alpha}");
            prev = r;
        }
    }
}

#[test]
fn argmax_invariant_to_positive_scaling_on_edgeless_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let n = rng.gen_range(3..12);
        let g = Graph::from_edges(n, &[]).unwrap();
        let s = NormalizedAdjacency::from_graph(&g);
        let (state, _) = random_state(n, 4, &mut rng);
        let k = rng.gen_range(0.1..10.0);
        let e_scale = rng.gen_range(0.0..2.0);
        let base = smooth(&(&state.z * 1.0), &state, &s, 0.8, 100, 1e-12);
        let scaled = smooth(&(&state.z * k), &state, &s, 0.8, 100, 1e-12);
        let unl: Vec<usize> = state.valid.iter().chain(&state.unlabeled).copied().collect();
        let (pa, pb) = (argmax_rows(&base.result), argmax_rows(&scaled.result));
        for &i in &unl {
            assert_eq!(pa[i], pb[i]);
        }
        let cfg = CsConfig {
            scale: e_scale,
            ..Default::default()
        };
        let out = correct_and_smooth(&state, &s, &cfg).unwrap();
        // without edges, errors never leave training rows
        for &i in &unl {
            assert_eq!(out.predictions[i], argmax_rows(&state.z)[i]);
        }
    }
}

#[test]
fn identity_configuration_preserves_base_accuracy() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let edges = random_digraph(30, 0.2, 0.0, &mut rng);
    let g = Graph::from_edges(30, &edges).unwrap();
    let (state, _) = random_state(30, 3, &mut rng);
    let cfg = CsConfig {
        scale: 0.0,
        alpha_smooth: 1e-12,
        ..Default::default()
    };
    let out = correct_and_smooth(&state, &NormalizedAdjacency::from_graph(&g), &cfg).unwrap();
    let base = argmax_rows(&state.z);
    for i in state.valid.iter().chain(&state.unlabeled) {
        assert_eq!(out.predictions[*i], base[*i]);
    }
}
