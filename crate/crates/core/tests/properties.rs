use proptest::prelude::*;

use relu_lab::bounds::{
    compare_prior_work, iteration_budget, perturbation_radius, required_width, width_base,
    PriorWorkInputs, RadiusContext, RadiusInputs, Theorem, TheoryQuery, THIS_WORK,
};
use relu_lab::data::{generate_dataset, min_separation, validate_assumptions, Dataset};
use relu_lab::diagnostics::{contraction_estimate, perturbation_report};
use relu_lab::experiments::ExperimentConfig;
use relu_lab::gram::{gram_closed_form, lambda0};
use relu_lab::network::{
    evaluate, forward_batch, init_params, read_checkpoint, write_checkpoint, Dims,
};
use relu_lab::numerics::{linear_fit, spectral_norm_default, Matrix, Rng};
use relu_lab::regions::{
    build_region_frame, frame_coordinates, reconstruct, region_membership,
    sample_separated_unit_vectors, RegionConfig,
};
use relu_lab::trainer::{read_csv, train, write_csv, TrainConfig};

fn small_cases() -> ProptestConfig {
    ProptestConfig::with_cases(24)
}

fn dataset(n: usize, d: usize, k: usize, seed: u64) -> Dataset {
    generate_dataset(n, d, k, 0.5, 0.05, &mut Rng::new(seed)).unwrap()
}

proptest! {
    #![proptest_config(small_cases())]

    #[test]
    fn linear_fit_recovers_exact_lines(a in -5.0..5.0f64, b in -3.0..3.0f64, len in 3usize..40) {
        let xs: Vec<f64> = (0..len).map(|i| i as f64 * 0.5).collect();
        let ys: Vec<f64> = xs.iter().map(|x| a + b * x).collect();
        let (ia, sb, r2) = linear_fit(&xs, &ys);
        prop_assert!((sb - b).abs() < 1e-10);
        prop_assert!((ia - a).abs() < 1e-9);
        if b != 0.0 {
            prop_assert!(r2 > 1.0 - 1e-10);
        }
    }

    #[test]
    fn spectral_norm_is_homogeneous_and_dominates_entries(seed in any::<u64>(), c in 0.1..10.0f64) {
        let mut rng = Rng::new(seed);
        let m = Matrix::from_fn(8, 5, |_, _| rng.normal());
        let s = spectral_norm_default(&m).unwrap();
        prop_assert!(s >= m.max_abs());
        prop_assert!(s <= m.frobenius_norm() * (1.0 + 1e-12));
        let sc = spectral_norm_default(&m.scaled(c)).unwrap();
        prop_assert!((sc - c * s).abs() <= 1e-7 * c * s);
    }

    #[test]
    fn rng_streams_are_reproducible(seed in any::<u64>(), stream in any::<u64>()) {
        let mut a = Rng::with_stream(seed, stream);
        let mut b = Rng::with_stream(seed, stream);
        for _ in 0..10 {
            prop_assert_eq!(a.next_u64(), b.next_u64());
        }
        let u = a.uniform();
        prop_assert!(u > 0.0 && u < 1.0);
        let s = a.sample_distinct(20, 7);
        let mut t = s.clone();
        t.sort_unstable();
        t.dedup();
        prop_assert_eq!(t.len(), 7);
        prop_assert!(s.iter().all(|&i| i < 20));
    }

    #[test]
    fn generated_data_satisfies_assumptions(
        n in 1usize..20, d in 2usize..12, k in 1usize..4, seed in any::<u64>(), phi in 0.0..0.4f64,
    ) {
        let ds = generate_dataset(n, d.max(4), k, 0.5, phi, &mut Rng::new(seed)).unwrap();
        prop_assert!(validate_assumptions(&ds).all_pass());
        if n >= 2 {
            prop_assert!(min_separation(&ds.x).unwrap() >= phi);
        }
        let back = Dataset::from_json(&ds.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn min_separation_ignores_row_order(seed in any::<u64>(), n in 2usize..10) {
        let ds = dataset(n, 5, 1, seed);
        let mut rng = Rng::new(seed ^ 1);
        let order = rng.sample_distinct(n, n);
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| ds.x.row(i).to_vec()).collect();
        let shuffled = Matrix::from_rows(&rows).unwrap();
        prop_assert_eq!(min_separation(&shuffled).unwrap(), min_separation(&ds.x).unwrap());
    }

    #[test]
    fn traces_are_consistent(seed in any::<u64>(), depth in 1usize..4, m in 4usize..40) {
        let ds = dataset(6, 5, 2, seed);
        let p = init_params(Dims::new(depth, m, 5, 2), &mut Rng::new(seed)).unwrap();
        let t = forward_batch(&p, &ds.x).unwrap();
        for l in 0..depth {
            for (&z, &h) in t.pre[l].as_slice().iter().zip(t.post[l].as_slice()) {
                prop_assert_eq!(h, if z > 0.0 { z } else { 0.0 });
            }
            prop_assert_eq!(t.sign_flips(&t, l), 0);
        }
        prop_assert!(t.output.is_finite());
        let ev = evaluate(&p, &ds).unwrap();
        let sum: f64 = ev.gradient.layers.iter().map(|g| g.frobenius_norm_sq()).sum();
        prop_assert_eq!(ev.gradient.frobenius_norm_sq(), sum);
    }

    #[test]
    fn zero_residual_gives_zero_gradient(seed in any::<u64>(), depth in 1usize..4) {
        let mut ds = dataset(5, 6, 3, seed);
        let p = init_params(Dims::new(depth, 24, 6, 3), &mut Rng::new(seed)).unwrap();
        ds.y = forward_batch(&p, &ds.x).unwrap().output;
        let ev = evaluate(&p, &ds).unwrap();
        prop_assert_eq!(ev.loss, 0.0);
        prop_assert!(ev.gradient.is_zero());
    }

    #[test]
    fn checkpoints_round_trip_exactly(seed in any::<u64>(), depth in 1usize..4, step in any::<u64>()) {
        let p = init_params(Dims::new(depth, 9, 4, 2), &mut Rng::new(seed)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, Some(seed), Some(step), &mut buf).unwrap();
        let (h, q) = read_checkpoint(buf.as_slice()).unwrap();
        prop_assert_eq!(h.seed, Some(seed));
        prop_assert_eq!(h.step, Some(step));
        prop_assert_eq!(q, p);
    }

    #[test]
    fn gram_is_symmetric_psd_with_half_diagonal(seed in any::<u64>(), n in 1usize..10) {
        let ds = dataset(n, 6, 1, seed);
        let g = gram_closed_form(&ds.x).unwrap();
        prop_assert_eq!(g.h.asymmetry(), Some(0.0));
        for i in 0..n {
            prop_assert!((g.h[(i, i)] - 0.5).abs() <= 1e-12);
        }
        prop_assert!(lambda0(&g).unwrap() >= -1e-12);
    }

    #[test]
    fn frames_are_orthonormal_and_reconstruct(seed in any::<u64>(), n in 1usize..5, d in 2usize..8) {
        let mut rng = Rng::new(seed);
        let z = sample_separated_unit_vectors(n, d, 0.0, &mut rng).unwrap();
        for i in 0..n {
            let q = build_region_frame(&z, i).unwrap();
            let err = q.transpose().matmul(&q).sub(&Matrix::identity(d)).frobenius_norm();
            prop_assert!(err <= 1e-12);
            let w: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let back = reconstruct(&q, &frame_coordinates(&q, &w));
            for (a, b) in back.iter().zip(&w) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn regions_are_disjoint(seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let z = sample_separated_unit_vectors(4, 6, 0.8, &mut rng).unwrap();
        let cfg = RegionConfig::new(z, 0.8, None).unwrap();
        for _ in 0..2000 {
            let w: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
            let count = (0..4).filter(|&i| region_membership(&w, &cfg, i).unwrap()).count();
            prop_assert!(count <= 1);
        }
    }

    #[test]
    fn training_records_and_csv_are_stable(seed in any::<u64>(), every in 1usize..7) {
        let ds = dataset(6, 5, 2, seed);
        let p = init_params(Dims::new(2, 16, 5, 2), &mut Rng::new(seed)).unwrap();
        let mut cfg = TrainConfig::sgd(25, 3, seed);
        cfg.eta_rule = relu_lab::trainer::EtaRule::TheoremGd;
        cfg.record_every = every;
        let a = train(&p, &ds, &cfg).unwrap();
        let b = train(&p, &ds, &cfg).unwrap();
        prop_assert!(a.records.windows(2).all(|w| w[0].t < w[1].t));
        prop_assert_eq!(a.records.len(), b.records.len());
        for (x, y) in a.records.iter().zip(&b.records) {
            prop_assert!(x.same_measurements(y));
            prop_assert!(x.loss >= 0.0);
            prop_assert!(x.dists.iter().all(|&v| v >= 0.0));
            prop_assert!(x.flips.iter().all(|&f| f <= 6 * 16));
        }
        let mut buf = Vec::new();
        write_csv(&a.records, 2, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        for (x, y) in a.records.iter().zip(&back) {
            prop_assert!(x.same_measurements(y));
        }
    }

    #[test]
    fn zero_step_leaves_parameters_and_rate_unchanged(seed in any::<u64>()) {
        let ds = dataset(5, 4, 1, seed);
        let p = init_params(Dims::new(2, 12, 4, 1), &mut Rng::new(seed)).unwrap();
        let r = train(&p, &ds, &TrainConfig::gd(30).with_eta(0.0)).unwrap();
        prop_assert_eq!(&r.final_params, &p);
        prop_assert_eq!(contraction_estimate(&r, &ds, 5).unwrap().fitted_rate, 0.0);
        let rep = perturbation_report(&p, &p, &ds).unwrap();
        prop_assert!(rep.flips.iter().all(|&f| f == 0));
        prop_assert!(rep.hidden_drift.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn width_fixed_point_holds(n in 2usize..40, depth in 1usize..6, k in 1usize..5, phi in 0.01..1.4f64) {
        for theorem in [Theorem::GdDeep, Theorem::SgdDeep, Theorem::SgdTwoLayer] {
            let q = TheoryQuery::sgd(theorem, n, depth, k, phi, 1.max(n / 2));
            let w = required_width(&q).unwrap();
            prop_assert!(w.converged);
            prop_assert!(w.residual <= 1e-10);
        }
    }

    #[test]
    fn bounds_move_with_their_exponents(n in 2usize..30, depth in 1usize..5, phi in 0.05..1.0f64, b in 1usize..4) {
        let b = b.min(n - 1).max(1);
        for theorem in [Theorem::GdDeep, Theorem::SgdDeep, Theorem::SgdTwoLayer] {
            let q = TheoryQuery::sgd(theorem, n, depth, 2, phi, b);
            let bigger_n = TheoryQuery { n: n + 1, ..q.clone() };
            let bigger_phi = TheoryQuery { phi: phi * 1.1, ..q.clone() };
            let m = required_width(&q).unwrap().m;
            prop_assert!(required_width(&bigger_n).unwrap().m > m);
            prop_assert!(required_width(&bigger_phi).unwrap().m < m);
            if theorem != Theorem::GdDeep {
                let bigger_b = TheoryQuery { batch: Some(b + 1), ..q.clone() };
                prop_assert!(width_base(&bigger_b) < width_base(&q));
            }
            prop_assert!(iteration_budget(&bigger_n, m).unwrap() > iteration_budget(&q, m).unwrap());
        }
        let r = |n| RadiusInputs { n, depth, k: 2, m: 1024.0, phi, batch: 1, c: 1.0 };
        for ctx in [RadiusContext::GdLemma, RadiusContext::SgdLemma, RadiusContext::TwoLayerSgd] {
            prop_assert!(perturbation_radius(ctx, r(n + 1)).unwrap() < perturbation_radius(ctx, r(n)).unwrap());
        }
    }

    #[test]
    fn this_work_has_the_mildest_relu_width(n in 4usize..40, depth in 1usize..6, phi in 0.05..1.0f64, d in 4usize..64) {
        let t = compare_prior_work(&PriorWorkInputs {
            n, depth, k: 2, phi, x_spectral: None, d: Some(d), lambda0: None, epsilon: 1e-3,
        }).unwrap();
        let ours = t.row(THIS_WORK).unwrap().width;
        for row in t.rows.iter().filter(|r| r.relu && r.work != THIS_WORK) {
            if row.deep || depth == 1 {
                prop_assert!(ours < row.width, "{} at L={depth}", row.work);
            }
        }
        let allen = t.row("allen2018convergence").unwrap();
        let expected = (n as f64).powi(16) / phi.powi(4);
        prop_assert!((allen.width / ours / expected - 1.0).abs() < 1e-12);
    }
}

#[test]
fn config_hash_changes_only_with_meaning() {
    let base = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/minimal.json")).unwrap();
    let a = ExperimentConfig::from_json(&base).unwrap();
    let spaced = base.replace(": ", ":   ");
    assert_eq!(ExperimentConfig::from_json(&spaced).unwrap().hash(), a.hash());
    for (from, to) in [("\"T\": 10", "\"T\": 11"), ("\"seed\": 3", "\"seed\": 4"), ("[64]", "[65]"), ("[7]", "[8]")] {
        assert!(base.contains(from), "{from}");
        let b = ExperimentConfig::from_json(&base.replace(from, to)).unwrap();
        assert_ne!(b.hash(), a.hash(), "{from}");
    }
}
