//! Production routines against the slow reference implementations.

use relu_lab::data::{generate_dataset, Dataset};
use relu_lab::gram::{gram_closed_form, lambda0};
use relu_lab::network::{evaluate, evaluate_subset, forward, init_params, Dims, NetworkParams};
use relu_lab::numerics::{min_eigenvalue_sym, spectral_norm_default, Matrix, Rng};
use relu_lab_oracles::{
    average_bundles, dense_svd, dense_sym_eig, fd_gradient, loop_backward, loop_forward,
    mc_gram_entry, Coord, FdOutcome,
};

fn setup(n: usize, d: usize, k: usize, depth: usize, m: usize, seed: u64) -> (Dataset, NetworkParams) {
    let ds = generate_dataset(n, d, k, 0.5, 0.1, &mut Rng::new(seed)).unwrap();
    let p = init_params(Dims::new(depth, m, d, k), &mut Rng::with_stream(seed, 1)).unwrap();
    (ds, p)
}

#[test]
fn forward_matches_loop_forward_bitwise() {
    for (depth, seed) in [(1, 1), (2, 2), (4, 3)] {
        let (ds, p) = setup(6, 7, 3, depth, 40, seed);
        for i in 0..ds.n() {
            let (out, trace) = forward(&p, ds.x.row(i)).unwrap();
            let (o, pres, _) = loop_forward(&p, ds.x.row(i));
            assert_eq!(out, o);
            for (l, pre) in pres.iter().enumerate() {
                let signs: Vec<bool> = pre.iter().map(|&z| z > 0.0).collect();
                assert_eq!(trace.sign_pattern(l), signs);
            }
        }
    }
}

#[test]
fn backprop_matches_loop_backward() {
    for (depth, seed) in [(1, 4), (2, 5), (3, 6)] {
        let (ds, p) = setup(8, 6, 2, depth, 48, seed);
        let ev = evaluate(&p, &ds).unwrap();
        let (loss, g) = loop_backward(&p, &ds);
        assert!((ev.loss - loss).abs() <= 1e-14 * loss);
        for (a, b) in ev.gradient.layers.iter().zip(&g.layers) {
            let scale = b.max_abs().max(1e-300);
            assert!(a.sub(b).max_abs() <= 1e-12 * scale, "depth {depth}");
        }
    }
}

#[test]
fn backprop_matches_finite_differences() {
    let (ds, p) = setup(6, 5, 2, 2, 24, 7);
    let g = evaluate(&p, &ds).unwrap().gradient;
    let mut rng = Rng::new(70);
    let coords: Vec<Coord> = (0..60)
        .map(|_| {
            let layer = rng.below(2);
            let cols = p.weights[layer].cols();
            Coord { layer, row: rng.below(24), col: rng.below(cols) }
        })
        .collect();
    let mut checked = 0;
    for (c, o) in coords.iter().zip(fd_gradient(&p, &ds, &coords, 1e-5)) {
        if let FdOutcome::Value(fd) = o {
            let bp = g.layers[c.layer][(c.row, c.col)];
            assert!((fd - bp).abs() <= 1e-6 * bp.abs().max(fd.abs()) + 1e-10, "{c:?} {fd} {bp}");
            checked += 1;
        }
    }
    assert!(checked >= 50, "only {checked} coordinates away from kinks");
}

#[test]
fn minibatch_gradients_average_to_full_gradient() {
    // Every size-2 batch of 5 examples, each example appearing in 4 of the 10.
    let (ds, p) = setup(5, 4, 2, 2, 16, 8);
    let full = evaluate(&p, &ds).unwrap().gradient;
    let mut bundles = Vec::new();
    for a in 0..5 {
        for b in a + 1..5 {
            bundles.push(evaluate_subset(&p, &ds, &[a, b]).unwrap().gradient);
        }
    }
    let avg = average_bundles(&bundles);
    assert!(avg.sub(&full).frobenius_norm() <= 1e-14 * full.frobenius_norm());
}

#[test]
fn spectral_norm_matches_dense_svd() {
    let mut rng = Rng::new(11);
    for (r, c) in [(1, 1), (5, 9), (30, 30), (64, 20)] {
        let m = Matrix::from_fn(r, c, |_, _| rng.normal());
        let s = spectral_norm_default(&m).unwrap();
        let top = dense_svd(&m)[0];
        assert!((s - top).abs() <= 1e-7 * top, "{r}x{c}: {s} vs {top}");
    }
    assert_eq!(spectral_norm_default(&Matrix::zeros(3, 4)).unwrap(), 0.0);
}

#[test]
fn min_eigenvalue_matches_dense_eig() {
    let mut rng = Rng::new(12);
    for n in [1, 2, 7, 25] {
        let a = Matrix::from_fn(n, n, |_, _| rng.normal());
        let s = a.add(&a.transpose());
        let ours = min_eigenvalue_sym(&s, 1e-12).unwrap();
        let theirs = dense_sym_eig(&s)[0];
        assert!((ours - theirs).abs() <= 1e-10 * (1.0 + theirs.abs()), "n={n}");
    }
}

#[test]
fn closed_form_gram_matches_monte_carlo_entries() {
    let ds = generate_dataset(4, 5, 1, 0.5, 0.2, &mut Rng::new(13)).unwrap();
    let g = gram_closed_form(&ds.x).unwrap();
    let mut rng = Rng::new(14);
    for i in 0..4 {
        for j in i..4 {
            let mc = mc_gram_entry(ds.x.row(i), ds.x.row(j), 200_000, &mut rng);
            assert!((mc - g.h[(i, j)]).abs() < 5e-3, "({i},{j})");
        }
    }
    let eig = dense_sym_eig(&g.h)[0];
    assert!((lambda0(&g).unwrap() - eig).abs() < 1e-12);
}
