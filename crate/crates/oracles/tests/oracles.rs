use relu_lab::data::{generate_dataset, Dataset};
use relu_lab::network::{forward_batch, init_params, Dims, NetworkParams};
use relu_lab::numerics::{Matrix, Rng};
use relu_lab_oracles::{
    dense_svd, dense_sym_eig, fd_gradient, loop_backward, mc_gram_entry, Coord, FdOutcome,
};

#[test]
fn svd_of_diagonal_is_sorted_absolute_diagonal() {
    let m = Matrix::from_diag(&[3.0, -7.0, 0.5, 2.0]);
    assert_eq!(dense_svd(&m), vec![7.0, 3.0, 2.0, 0.5]);
    let e = dense_sym_eig(&Matrix::from_diag(&[3.0, -7.0, 0.5]));
    assert_eq!(e, vec![-7.0, 0.5, 3.0]);
}

#[test]
fn orthogonal_matrix_has_unit_singular_values() {
    // Givens rotations composed into a 6×6 orthogonal matrix.
    let n = 6;
    let mut q = Matrix::identity(n);
    let mut rng = Rng::new(5);
    for i in 0..n {
        for j in i + 1..n {
            let a = rng.uniform() * std::f64::consts::TAU;
            let (c, s) = (a.cos(), a.sin());
            let g = Matrix::from_fn(n, n, |r, k| match (r, k) {
                _ if r == i && k == i => c,
                _ if r == j && k == j => c,
                _ if r == i && k == j => -s,
                _ if r == j && k == i => s,
                _ if r == k => 1.0,
                _ => 0.0,
            });
            q = g.matmul(&q);
        }
    }
    for s in dense_svd(&q) {
        assert!((s - 1.0).abs() < 1e-12, "{s}");
    }
}

#[test]
fn eigenvalues_sum_to_trace() {
    let mut rng = Rng::new(9);
    let a = Matrix::from_fn(20, 20, |_, _| rng.normal());
    let s = a.add(&a.transpose());
    let trace: f64 = (0..20).map(|i| s[(i, i)]).sum();
    let e = dense_sym_eig(&s);
    assert!((e.iter().sum::<f64>() - trace).abs() < 1e-10);
    assert!(e.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
#[should_panic]
fn size_guard_rejects_large_matrices() {
    dense_svd(&Matrix::zeros(201, 3));
}

#[test]
fn finite_differences_vanish_at_zero_residual() {
    let mut ds = generate_dataset(5, 4, 2, 0.5, 0.1, &mut Rng::new(1)).unwrap();
    let p = init_params(Dims::new(2, 16, 4, 2), &mut Rng::new(2)).unwrap();
    ds.y = forward_batch(&p, &ds.x).unwrap().output;
    let coords: Vec<Coord> = (0..10)
        .map(|i| Coord { layer: i % 2, row: i, col: i % 4 })
        .collect();
    for o in fd_gradient(&p, &ds, &coords, 1e-5) {
        if let FdOutcome::Value(v) = o {
            assert!(v.abs() < 1e-9, "{v}");
        }
    }
}

#[test]
fn finite_differences_match_linear_regime_gradient() {
    // Positive weights and inputs keep every unit active, so the network is
    // the linear map V·W and the gradient is (1/n) Σ Vᵀ(VWxᵢ − yᵢ)xᵢᵀ.
    let (n, d, m, k) = (3, 3, 4, 2);
    let mut rng = Rng::new(3);
    let x = Matrix::from_fn(n, d, |_, _| 0.2 + rng.uniform());
    let y = Matrix::from_fn(n, k, |_, _| rng.normal());
    let w = Matrix::from_fn(m, d, |_, _| 0.1 + rng.uniform());
    let v = Matrix::from_fn(k, m, |_, _| rng.normal());
    let p = NetworkParams::new(vec![w.clone()], v.clone()).unwrap();
    let ds = Dataset::new(x.clone(), y.clone(), 0.5).unwrap();

    let mut grad = Matrix::zeros(m, d);
    for i in 0..n {
        let h = w.mul_vec(x.row(i));
        let out = v.mul_vec(&h);
        let r: Vec<f64> = out.iter().zip(y.row(i)).map(|(o, t)| o - t).collect();
        let back = v.transpose_mul_vec(&r);
        for a in 0..m {
            for b in 0..d {
                grad[(a, b)] += back[a] * x[(i, b)] / n as f64;
            }
        }
    }
    let coords: Vec<Coord> = (0..m)
        .flat_map(|row| (0..d).map(move |col| Coord { layer: 0, row, col }))
        .collect();
    for (c, o) in coords.iter().zip(fd_gradient(&p, &ds, &coords, 1e-4)) {
        let FdOutcome::Value(fd) = o else {
            panic!("linear regime has no kinks: {o:?}")
        };
        assert!((fd - grad[(c.row, c.col)]).abs() < 1e-8, "{c:?}: {fd}");
    }
    let (_, g) = loop_backward(&p, &ds);
    assert!(g.layers[0].sub(&grad).max_abs() < 1e-14);
}

#[test]
fn monte_carlo_gram_entry_of_a_unit_vector_is_half() {
    let x = [0.6, 0.8];
    let v = mc_gram_entry(&x, &x, 200_000, &mut Rng::new(4));
    assert!((v - 0.5).abs() < 5e-3, "{v}");
    assert_eq!(mc_gram_entry(&x, &[-0.6, -0.8], 1000, &mut Rng::new(4)), 0.0);
}
