use proptest::prelude::*;

use hpo_core::autodiff::{Bindings, Graph};
use hpo_core::eval::{relative_l2, summarize};
use hpo_core::function_spaces::{latin_hypercube, sample_grf, sample_sine};
use hpo_core::nets::checkpoint::OptimizerState;
use hpo_core::nets::fastmath;
use hpo_core::pde_oracles::{solve_reaction_diffusion, true_hidden_term};
use hpo_core::{binio, rng, Activation, Checkpoint, FunctionFamily, FunctionSample, GrfSpec, MlpSpec, OperatorModel};
use hpo_core::{SensorLayout, System, SystemParams, GRID_N};

fn vec_pair(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| (prop::collection::vec(-1e3..1e3f64, n), prop::collection::vec(-1e3..1e3f64, n)))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn relative_l2_is_scale_invariant((p, r) in vec_pair(1..50), a in 1e-3..1e3f64) {
        prop_assume!(norm(&r) > 1e-6);
        let base = relative_l2(&p, &r).unwrap();
        let sp: Vec<f64> = p.iter().map(|x| a * x).collect();
        let sr: Vec<f64> = r.iter().map(|x| a * x).collect();
        let scaled = relative_l2(&sp, &sr).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-12 * base.max(1.0));
        prop_assert!(base >= 0.0);
        prop_assert_eq!(relative_l2(&r, &r).unwrap(), 0.0);
    }

    #[test]
    fn relative_l2_triangle_bound((p, r) in vec_pair(1..40), q in prop::collection::vec(-1e3..1e3f64, 40)) {
        prop_assume!(norm(&r) > 1e-6);
        let q = &q[..p.len()];
        let lhs = relative_l2(&p, &r).unwrap();
        let rhs = norm(&p.iter().zip(q).map(|(a, b)| a - b).collect::<Vec<_>>()) / norm(&r) + relative_l2(q, &r).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn summary_shift_and_bounds(xs in prop::collection::vec(-1e3..1e3f64, 1..100), c in -1e3..1e3f64) {
        let s = summarize(&xs).unwrap();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(s.mean >= lo - 1e-9 && s.mean <= hi + 1e-9);
        prop_assert!(s.std >= 0.0 && s.std <= (hi - lo) + 1e-9);
        let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
        let t = summarize(&shifted).unwrap();
        prop_assert!((t.mean - s.mean - c).abs() < 1e-9);
        prop_assert!((t.std - s.std).abs() < 1e-7);
        prop_assert_eq!(t.count, xs.len());
    }

    #[test]
    fn latin_hypercube_fills_every_stratum_once(n in 1usize..200, dims in 1usize..4, seed: u64) {
        let pts = latin_hypercube(&mut rng::rng(seed), n, dims);
        prop_assert_eq!(pts.len(), n);
        for d in 0..dims {
            let mut hits = vec![0; n];
            for p in &pts {
                prop_assert!((0.0..1.0).contains(&p[d]));
                hits[(p[d] * n as f64) as usize] += 1;
            }
            prop_assert!(hits.iter().all(|&h| h == 1));
        }
    }

    #[test]
    fn sine_inputs_vanish_at_both_ends(seed: u64) {
        let f = sample_sine(seed, 5).unwrap();
        prop_assert_eq!(f.values[0], 0.0);
        prop_assert_eq!(f.values[GRID_N - 1], 0.0);
        prop_assert_eq!(f.family, FunctionFamily::Sine);
    }

    #[test]
    fn samplers_are_pure_in_the_seed(seed: u64, l in 0.1..0.6f64) {
        let a = sample_grf(seed, GrfSpec::new(l)).unwrap();
        let b = sample_grf(seed, GrfSpec::new(l)).unwrap();
        prop_assert_eq!(a.values, b.values);
        prop_assert_eq!(sample_sine(seed, 5).unwrap(), sample_sine(seed, 5).unwrap());
    }

    #[test]
    fn derived_seeds_separate_streams(seed: u64, i in 0u64..1000) {
        prop_assert_ne!(rng::derive(seed, "points", i), rng::derive(seed, "epoch", i));
        prop_assert_ne!(rng::derive(seed, "points", i), rng::derive(seed, "points", i + 1));
        prop_assert_eq!(rng::derive(seed, "points", i), rng::derive(seed, "points", i));
    }

    #[test]
    fn binary_round_trip(v in prop::collection::vec(any::<f64>(), 0..200)) {
        let back = binio::decode(&binio::encode(&v)).unwrap();
        prop_assert_eq!(v.len(), back.len());
        for (a, b) in v.iter().zip(&back) {
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn fast_tanh_tracks_libm(x in -30.0..30.0f64) {
        let (a, b) = (fastmath::tanh(x), x.tanh());
        prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * b.abs().max(f64::MIN_POSITIVE), "{x}: {a} vs {b}");
        prop_assert!(a.abs() <= 1.0);
    }

    #[test]
    fn sensor_layouts_are_sorted_distinct_nodes(n in 1usize..500, seed: u64) {
        let l = SensorLayout::random(n, seed, 0.01).unwrap();
        prop_assert_eq!(l.len(), n);
        prop_assert!(l.validate().is_ok());
        prop_assert!(l.coords().iter().all(|&(x, t)| (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&t)));
    }

    #[test]
    fn graph_derivatives_of_a_polynomial(x in -2.0..2.0f64, a in -3.0..3.0f64) {
        // y = a x³ + tanh(x): y' = 3a x² + 1 - tanh², y'' = 6a x - 2 tanh (1 - tanh²)
        let mut g = Graph::new();
        let xv = g.input(0);
        let av = g.param(0);
        let x2 = g.mul(xv, xv);
        let x3 = g.mul(x2, xv);
        let ax3 = g.mul(av, x3);
        let th = g.tanh(xv);
        let y = g.add(ax3, th);
        let d1 = g.grad(y, &[xv]).unwrap()[0];
        let d2 = g.grad(d1, &[xv]).unwrap()[0];
        let vals = g.evaluate_many(&[d1, d2], &Bindings::new(&[x], &[a])).unwrap();
        let t = x.tanh();
        prop_assert!((vals[0] - (3.0 * a * x * x + 1.0 - t * t)).abs() < 1e-12);
        prop_assert!((vals[1] - (6.0 * a * x - 2.0 * t * (1.0 - t * t))).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    // With K = 0 the scheme is linear in the source.
    #[test]
    fn reaction_free_solver_is_linear(seed: u64, a in -3.0..3.0f64) {
        let f = sample_sine(seed, 5).unwrap();
        let af = FunctionSample::new(f.values.iter().map(|v| a * v).collect(), f.family, seed);
        let p = SystemParams::rd(0.01, 0.0);
        let u = solve_reaction_diffusion(&f, p).unwrap();
        let au = solve_reaction_diffusion(&af, p).unwrap();
        let scale = u.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for (x, y) in u.values.iter().zip(&au.values) {
            prop_assert!((a * x - y).abs() <= 1e-10 * scale.max(1.0));
        }
        prop_assert!(u.values[..GRID_N].iter().all(|&v| v == 0.0), "zero initial condition");
        let n = true_hidden_term(&u, p, System::Rd);
        prop_assert_eq!(n.values.len(), GRID_N * GRID_N);
    }

    #[test]
    fn checkpoints_round_trip(seed: u64, width in 1usize..12, step in 0u64..10_000) {
        let branch = MlpSpec::new(&[7, width, 3], Activation::Tanh, seed);
        let trunk = MlpSpec::new(&[2, width, 3], Activation::Tanh, seed ^ 1);
        let model = OperatorModel::new(&hpo_core::nets::OperatorSpec { branch, trunk }).unwrap();
        let n = model.num_params();
        let ck = Checkpoint {
            kind: "test".into(),
            config_hash: "ab".repeat(32),
            seed,
            step,
            model,
            aux: None,
            optimizer: Some(OptimizerState { step, m: vec![0.5; n], v: vec![0.25; n] }),
        };
        let dir = tempfile::tempdir().unwrap();
        ck.save(dir.path()).unwrap();
        prop_assert_eq!(Checkpoint::load(dir.path()).unwrap(), ck);
    }
}
