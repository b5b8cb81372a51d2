use std::sync::Arc;

use sosp_core::expsearch::{exhaustive_sosp_search, feasibility_probe, sphere_cover, Acceptance, SearchConfig};
use sosp_core::linalg::{dist, norm};
use sosp_core::oracle::TruthView;
use sosp_core::problems;
use sosp_core::relu::{
    arc_cosine_kernel, in_region, one_point_convexity_audit, population_grad, population_hess, population_risk, relu,
    sample_region, ReluInstance,
};
use sosp_core::stationarity::{check_sosp, finite_diff_grad};
use sosp_core::RngStream;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn kernel_agrees_with_monte_carlo() {
    let mut rng = RngStream::new(11, 0);
    for _ in 0..5 {
        let u = rng.gaussian(4, 1.0).unwrap();
        let v = rng.gaussian(4, 1.0).unwrap();
        let n = 200_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = rng.gaussian(4, 1.0).unwrap();
            let a = relu(dot(&x, &u)) * relu(dot(&x, &v));
            s1 += a;
            s2 += a * a;
        }
        let m = s1 / n as f64;
        let se = ((s2 / n as f64 - m * m) / n as f64).sqrt();
        assert!((m - arc_cosine_kernel(&u, &v).unwrap()).abs() <= 4.0 * se);
    }
}

#[test]
fn population_derivatives_match_differences() {
    let mut rng = RngStream::new(12, 0);
    for d in [2, 3, 6] {
        let w_star = rng.unit_sphere(d);
        for _ in 0..20 {
            let w = sample_region(&w_star, &mut rng);
            let g = population_grad(&w, &w_star).unwrap();
            let fd = finite_diff_grad(&|p| population_risk(p, &w_star).unwrap(), &w, 1e-5);
            let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
            assert!(norm(&diff) <= 1e-5 * norm(&g));
            let h = population_hess(&w, &w_star).unwrap();
            for j in 0..d {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += 1e-5;
                wm[j] -= 1e-5;
                let gp = population_grad(&wp, &w_star).unwrap();
                let gm = population_grad(&wm, &w_star).unwrap();
                for i in 0..d {
                    assert!((h[(i, j)] - (gp[i] - gm[i]) / 2e-5).abs() < 1e-3);
                }
            }
        }
    }
}

#[test]
fn w_star_is_a_strict_minimum() {
    let w_star = RngStream::new(13, 0).unit_sphere(5);
    assert!(norm(&population_grad(&w_star, &w_star).unwrap()) < 1e-15);
    let eig = population_hess(&w_star, &w_star).unwrap().symmetric_eigenvalues();
    assert!((eig.min() - 0.5).abs() < 1e-12);
}

#[test]
fn one_point_convexity_holds_in_region() {
    for d in [2, 5] {
        let mut rng = RngStream::new(14, d as u64);
        let w_star = rng.unit_sphere(d);
        let rep = one_point_convexity_audit(&w_star, 2000, &mut rng).unwrap();
        assert_eq!(rep.violations, 0, "{rep:?}");
    }
}

#[test]
fn empirical_differences_approach_population_differences() {
    let w_star = RngStream::new(15, 0).unit_sphere(3);
    let mut rng = RngStream::new(15, 1);
    let pts: Vec<Vec<f64>> = (0..20).map(|_| sample_region(&w_star, &mut rng)).collect();
    let gap = |n: usize| {
        let inst = ReluInstance::generate_with(w_star.clone(), n, 77).unwrap();
        let e0 = inst.empirical_risk(&w_star);
        let p0 = population_risk(&w_star, &w_star).unwrap();
        pts.iter()
            .map(|w| ((inst.empirical_risk(w) - e0) - (population_risk(w, &w_star).unwrap() - p0)).abs())
            .fold(0.0, f64::max)
    };
    assert!(gap(100_000) < gap(100) / 5.0);
    assert!(gap(100_000) < 0.02);
}

#[test]
fn region_sampler_stays_in_region() {
    let mut rng = RngStream::new(16, 0);
    let w_star = rng.unit_sphere(4);
    for _ in 0..500 {
        assert!(in_region(&sample_region(&w_star, &mut rng), &w_star));
    }
}

#[test]
fn true_derivatives_are_feasible_and_inside_error_bars() {
    let (nu, rho) = (1e-4, 24.0);
    let o = problems::double_well(2, nu).unwrap();
    let truth = o.truth_arc().unwrap();
    let sphere = sphere_cover(2, 0.1).unwrap();
    let mut rng = RngStream::new(17, 0);
    for _ in 0..20 {
        let x = rng.uniform_cube(2, 1.2);
        let r = 0.05;
        let fit = feasibility_probe(&o, &x, r, &sphere, nu, rho).unwrap().expect("probe is feasible");
        let g = truth.gradient(&x).unwrap();
        let h = truth.hessian(&x).unwrap();
        assert!(dist(&fit.g, &g) <= fit.grad_err, "{} > {}", dist(&fit.g, &g), fit.grad_err);
        let dh = (&fit.h - &h).norm();
        assert!(dh <= fit.hess_err, "{dh} > {}", fit.hess_err);
    }
}

#[test]
fn search_results_are_second_order_stationary() {
    for (d, seed) in [(1usize, 0u64), (1, 1), (2, 2)] {
        let (eps, rho): (f64, f64) = (0.3, 40.0);
        let nu = (eps * eps * eps / rho).sqrt() / 10.0;
        let o = problems::double_well_seeded(d, nu, &mut RngStream::new(seed, 0)).unwrap();
        let mut cfg = SearchConfig::new(eps, 25.0, rho, 1.0, nu);
        cfg.radius = Some(1.5);
        let res = exhaustive_sosp_search(&o, &cfg).unwrap();
        let truth: Arc<dyn TruthView> = o.truth_arc().unwrap();
        let rep = check_sosp(truth.as_ref(), &res.point, 2.0 * eps, rho).unwrap();
        assert!(rep.verdict, "d={d}: {rep:?}");
        // the returned point sits near one of the wells
        assert!((res.point[0].abs() - 1.0).abs() < 0.2, "{:?}", res.point);
    }
}

#[test]
fn literal_acceptance_is_selectable() {
    let o = problems::quartic(1e-4).unwrap();
    let mut cfg = SearchConfig::new(0.3, 25.0, 40.0, 1.0, 1e-4);
    cfg.radius = Some(1.5);
    cfg.acceptance = Acceptance::Literal;
    let res = exhaustive_sosp_search(&o, &cfg).unwrap();
    assert!(res.fit.h_min_eig >= -2.0 * (40.0f64 * 0.3).sqrt());
}

#[test]
fn large_noise_sets_outside_regime() {
    let nu = 0.5;
    let o = problems::double_well(1, nu).unwrap();
    let sphere = sphere_cover(1, 0.1).unwrap();
    if let Some(fit) = feasibility_probe(&o, &[1.0], 0.05, &sphere, nu, 24.0).unwrap() {
        assert!(fit.outside_regime);
    }
}
