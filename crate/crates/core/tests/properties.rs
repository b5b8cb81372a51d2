use std::sync::Arc;

use approx::assert_relative_eq;
use proptest::prelude::*;

use sosp_core::hardfn::{g1, g1_prime, g1_second, g2, g2_prime, g2_second, h_value, HardInstanceParams, Variant};
use sosp_core::linalg::{dist, norm};
use sosp_core::optim::{default_config, fpsgd, psgd, zpsgd, OptimizerConfig};
use sosp_core::oracle::{Oracle, StochasticGradient, TruthView};
use sosp_core::problems::{self, NoisyGradient};
use sosp_core::stationarity::{check_sosp, finite_diff_grad};
use sosp_core::RngStream;

fn small_cfg(d: usize, batch: usize, iters: usize, seed: u64) -> OptimizerConfig {
    let mut cfg = default_config(d, 0.1, 24.0, 24.0, 4.0, 0.1).unwrap();
    cfg.batch = batch;
    cfg.max_iters = iters;
    cfg.seed = seed;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn batch_queries_are_counted_exactly(m in 1usize..300, d in 1usize..6) {
        let o = problems::quadratic(d, 0.0).unwrap();
        let xs: Vec<Vec<f64>> = (0..m).map(|i| vec![i as f64 * 1e-3; d]).collect();
        let before = o.queries();
        let _ = o.values(&xs);
        prop_assert_eq!(o.queries() - before, m as u64);
    }

    #[test]
    fn query_budgets(batch in 1usize..8, iters in 1usize..12, seed in 0u64..1000) {
        let o = problems::double_well(2, 0.01).unwrap();
        let cfg = small_cfg(2, batch, iters, seed);
        let rec = zpsgd(&o, &[0.3, -0.2], &cfg, &mut RngStream::new(seed, 0)).unwrap();
        prop_assert_eq!(rec.queries_used, (iters * (batch + 1)) as u64);
        let rec = fpsgd(&o, &[0.3, -0.2], &cfg, &mut RngStream::new(seed, 0)).unwrap();
        prop_assert_eq!(rec.queries_used, (iters * batch) as u64);
        let s = NoisyGradient::new(o.truth_arc().unwrap(), 0.1).unwrap();
        let rec = psgd(&s, &[0.3, -0.2], &cfg, &mut RngStream::new(seed, 0)).unwrap();
        prop_assert_eq!(rec.queries_used, (iters * batch) as u64);
        prop_assert_eq!(s.queries(), (iters * batch) as u64);
    }

    #[test]
    fn step_size_bound(seed in 0u64..1000, x in -1.5f64..1.5, y in -1.5f64..1.5) {
        let o = problems::double_well(2, 0.01).unwrap();
        let cfg = small_cfg(2, 20, 15, seed);
        let rec = zpsgd(&o, &[x, y], &cfg, &mut RngStream::new(seed, 0)).unwrap();
        for (t, s) in rec.steps.iter().enumerate() {
            let moved = dist(&rec.iterates[t], &rec.iterates[t + 1]);
            prop_assert!(moved <= cfg.eta * (s.grad_norm + cfg.perturb_radius) * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn same_seed_same_trajectory(seed in 0u64..1000) {
        let o = problems::double_well(2, 0.01).unwrap();
        let cfg = small_cfg(2, 50, 10, seed);
        let a = zpsgd(&o, &[0.5, 0.5], &cfg, &mut RngStream::new(seed, 3)).unwrap();
        let b = zpsgd(&o, &[0.5, 0.5], &cfg, &mut RngStream::new(seed, 3)).unwrap();
        prop_assert_eq!(a.iterates, b.iterates);
    }

    #[test]
    fn exact_descent_is_monotone(x in -1.2f64..1.2, y in -1.2f64..1.2) {
        // double well has gradient Lipschitz constant below 24 on this box
        let truth = Arc::new(problems::double_well_truth(2));
        let s = NoisyGradient::new(truth.clone(), 0.0).unwrap();
        let mut cfg = small_cfg(2, 1, 40, 0);
        cfg.perturb_radius = 0.0;
        let rec = psgd(&s, &[x, y], &cfg, &mut RngStream::new(0, 0)).unwrap();
        for w in rec.iterates.windows(2) {
            prop_assert!(truth.value(&w[1]) <= truth.value(&w[0]) + 1e-12);
        }
    }

    #[test]
    fn verdict_is_monotone(x in -1.5f64..1.5, y in -1.5f64..1.5, eps in 0.01f64..1.0, rho in 0.01f64..10.0) {
        let t = problems::double_well_truth(2);
        if check_sosp(&t, &[x, y], eps, rho).unwrap().verdict {
            prop_assert!(check_sosp(&t, &[x, y], eps * 1.5, rho).unwrap().verdict);
            prop_assert!(check_sosp(&t, &[x, y], eps, rho * 1.5).unwrap().verdict);
        }
    }

    #[test]
    fn h_is_even_and_compactly_supported(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
        let mu = 10.0;
        let v = [0.0, 1.0, 0.0];
        let y = [a / mu, b / mu, c / mu];
        let neg: Vec<f64> = y.iter().map(|t| -t).collect();
        prop_assert_eq!(h_value(&y, &v, mu), h_value(&neg, &v, mu));
        let along = (b / mu).abs();
        let across = ((a / mu).powi(2) + (c / mu).powi(2)).sqrt();
        if along.max(across) >= 1.0 / mu {
            prop_assert_eq!(h_value(&y, &v, mu), 0.0);
        }
    }

    #[test]
    fn hard_pair_is_periodic(seed in 0u64..200, t in -3.0f64..3.0, axis in 0usize..4) {
        let p = HardInstanceParams::new(4, 1.0, 1.0, 10.0, Variant::PolynomialQuery, &mut RngStream::new(seed, 0)).unwrap();
        let mut x: Vec<f64> = RngStream::new(seed, 1).uniform_cube(4, 0.5);
        x[axis] = t * 0.1;
        let mut y = x.clone();
        y[axis] += std::f64::consts::PI * p.scale_r();
        prop_assert!((p.hard_big_f(&x) - p.hard_big_f(&y)).abs() <= 1e-9);
        prop_assert!((p.hard_f(&x) - p.hard_f(&y)).abs() <= 1e-9);
    }

    #[test]
    fn hard_gap_bounded(seed in 0u64..200) {
        let p = HardInstanceParams::new(4, 1.0, 1.0, 300.0, Variant::PolynomialQuery, &mut RngStream::new(seed, 0)).unwrap();
        let x = RngStream::new(seed, 1).uniform_ball(4, 3.0 * p.ball_radius());
        let gap = (p.hard_f(&x) - p.hard_big_f(&x)).abs();
        prop_assert!(gap <= p.epsilon * p.scale_r() * (1.0 + 1e-12));
        if p.classify(&x).label != sosp_core::hardfn::RegionLabel::Band {
            prop_assert_eq!(p.hard_f(&x), p.hard_big_f(&x));
        }
    }

    #[test]
    fn informative_points_do_not_depend_on_v(seed in 0u64..200) {
        let p = HardInstanceParams::new(4, 1.0, 1.0, 300.0, Variant::PolynomialQuery, &mut RngStream::new(seed, 0)).unwrap();
        let q = p.with_other_direction(RngStream::new(seed, 9).unit_sphere(4)).unwrap();
        let x = RngStream::new(seed, 1).uniform_cube(4, 1.5);
        if p.non_informative(&x) && q.non_informative(&x) {
            prop_assert_eq!(p.hard_f(&x), q.hard_f(&x));
        }
    }
}

#[test]
fn seams_are_c2() {
    for x in [1.0, -1.0] {
        assert_relative_eq!(g1_prime(x), 0.0, epsilon = 1e-12);
        assert_relative_eq!(g2_prime(x), 0.0, epsilon = 1e-12);
        assert_relative_eq!(g1_second(x), 0.0, epsilon = 1e-12);
        assert_relative_eq!(g2_second(x), 0.0, epsilon = 1e-12);
        // one-sided differences agree with the analytic zeros
        let h = 1e-4;
        let inside = x - x.signum() * h;
        assert!(((g1(x) - g1(inside)) / h).abs() < 1e-6);
        assert!(((g2(x) - g2(inside)) / h).abs() < 1e-6);
    }
}

#[test]
fn analytic_gradients_match_differences_on_test_problems() {
    let mut rng = RngStream::new(5, 0);
    let truths = [
        problems::quadratic_truth(3),
        problems::double_well_truth(3),
        problems::sine_bowl_truth(3),
    ];
    for t in &truths {
        for _ in 0..50 {
            let x = rng.uniform_cube(3, 1.5);
            let g = t.gradient(&x).unwrap();
            let fd = finite_diff_grad(&|p| t.value(p), &x, 1e-6);
            let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
            assert!(norm(&diff) <= 1e-5 * norm(&g).max(1.0));
        }
    }
}
