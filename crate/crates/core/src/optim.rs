//! Perturbed stochastic gradient methods: ZPSGD (value queries through
//! Gaussian smoothing), FPSGD (perturbed gradient queries), mini-batch PSGD
//! (generic stochastic gradients) and a plain gradient-descent baseline.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{is_finite, norm};
use crate::oracle::{Oracle, StochasticGradient, TruthView};
use crate::rng::RngStream;
use crate::smoothing::{fpsgd_grad_estimate, grad_estimate, SmoothingConfig};
use crate::stationarity::{check_sosp, StationarityReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub eta: f64,
    pub perturb_radius: f64,
    /// Smoothing radius; 0 means no smoothing (PSGD, GD, unsmoothed FPSGD).
    pub sigma: f64,
    pub batch: usize,
    pub max_iters: usize,
    pub epsilon: f64,
    pub ell: f64,
    pub rho: f64,
    pub bound_b: f64,
    pub delta: f64,
    pub seed: u64,
    /// Derived quantities when the config came from [`default_config`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
}

/// Quantities of the hyperparameter schedule, kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub c: f64,
    pub chi: f64,
    /// Stand-in for the initial suboptimality: `2B`.
    pub delta_f: f64,
    /// Escape horizon `chi c / (eta sqrt(rho eps))`.
    pub escape_steps: f64,
    /// Escape decrease `sqrt(eps^3 / rho) chi^-3 c^-5`.
    pub escape_decrease: f64,
    /// Mini-batch size before capping.
    pub batch_theory: f64,
    /// Iteration count before capping.
    pub iters_theory: f64,
    pub batch_cap: usize,
    pub iter_cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleOptions {
    pub c: f64,
    pub batch_cap: usize,
    pub iter_cap: usize,
}

impl Default for ScheduleOptions {
    fn default() -> Self {
        Self {
            c: 3.0,
            batch_cap: 10_000,
            iter_cap: 100_000,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        pos("eta", self.eta)?;
        pos("epsilon", self.epsilon)?;
        pos("ell", self.ell)?;
        pos("rho", self.rho)?;
        pos("bound_b", self.bound_b)?;
        if !(self.perturb_radius >= 0.0) || !self.perturb_radius.is_finite() {
            return Err(invalid("perturb_radius", format!("must be nonnegative, got {}", self.perturb_radius)));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(invalid("sigma", format!("must be nonnegative, got {}", self.sigma)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(invalid("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        if self.batch == 0 {
            return Err(invalid("batch", "must be at least 1"));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        Ok(())
    }

    fn smoothing(&self) -> Result<SmoothingConfig> {
        SmoothingConfig::new(self.sigma, self.batch)
    }
}

/// `chi = max{1, ln(d ell delta_f / (rho eps delta))}`.
pub fn chi(d: usize, epsilon: f64, ell: f64, rho: f64, delta_f: f64, delta: f64) -> f64 {
    (d as f64 * ell * delta_f / (rho * epsilon * delta)).ln().max(1.0)
}

pub fn default_config(d: usize, epsilon: f64, ell: f64, rho: f64, bound_b: f64, delta: f64) -> Result<OptimizerConfig> {
    default_config_with(d, epsilon, ell, rho, bound_b, delta, ScheduleOptions::default())
}

pub fn default_config_with(
    d: usize,
    epsilon: f64,
    ell: f64,
    rho: f64,
    bound_b: f64,
    delta: f64,
    opts: ScheduleOptions,
) -> Result<OptimizerConfig> {
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    if !(opts.c > 0.0) || opts.batch_cap == 0 || opts.iter_cap == 0 {
        return Err(invalid("schedule", "c and caps must be positive"));
    }
    let eta = 1.0 / ell;
    let c = opts.c;
    let delta_f = 2.0 * bound_b;
    let chi = chi(d, epsilon, ell, rho, delta_f, delta);
    let sigma = (epsilon / (rho * d as f64)).sqrt();
    let r = epsilon * chi.powi(-3) * c.powi(-6);
    let lambda = chi * c;
    let subgauss = bound_b / sigma;
    let batch_theory = 2.0 * lambda * lambda * subgauss * subgauss / (epsilon * epsilon) * (d as f64 / delta).ln().max(0.0);
    let iters_theory = 2.0 * delta_f * chi.powi(4) * ell / (epsilon * epsilon);
    let cfg = OptimizerConfig {
        eta,
        perturb_radius: r,
        sigma,
        batch: clamp_count(batch_theory, opts.batch_cap),
        max_iters: clamp_count(iters_theory, opts.iter_cap),
        epsilon,
        ell,
        rho,
        bound_b,
        delta,
        seed: 0,
        schedule: Some(Schedule {
            c,
            chi,
            delta_f,
            escape_steps: chi * c / (eta * (rho * epsilon).sqrt()),
            escape_decrease: (epsilon.powi(3) / rho).sqrt() * chi.powi(-3) * c.powi(-5),
            batch_theory,
            iters_theory,
            batch_cap: opts.batch_cap,
            iter_cap: opts.iter_cap,
        }),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn clamp_count(v: f64, cap: usize) -> usize {
    if !v.is_finite() || v >= cap as f64 {
        cap
    } else {
        (v.ceil() as usize).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostic {
    pub grad_norm: f64,
    pub perturb_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub iterates: Vec<Vec<f64>>,
    /// Optional per-iterate probes filled in by the caller.
    pub values: Vec<f64>,
    pub queries_used: u64,
    pub steps: Vec<StepDiagnostic>,
    pub terminal: Option<StationarityReport>,
}

impl RunRecord {
    pub fn last(&self) -> &[f64] {
        self.iterates.last().expect("a run record holds at least x0")
    }

    pub fn steps_taken(&self) -> usize {
        self.iterates.len() - 1
    }

    /// Attaches the stationarity report of the final iterate under `F`.
    pub fn certify(&mut self, truth: &dyn TruthView, eps: f64, rho: f64) -> Result<&StationarityReport> {
        let rep = check_sosp(truth, self.last(), eps, rho)?;
        Ok(self.terminal.insert(rep))
    }
}

/// Shared loop `x <- x - eta (g(x) + xi)`, `xi` uniform in the ball of
/// radius `r`.
fn perturbed_loop<G>(x0: &[f64], cfg: &OptimizerConfig, rng: &mut RngStream, mut grad: G) -> Result<(Vec<Vec<f64>>, Vec<StepDiagnostic>)>
where
    G: FnMut(&[f64], &mut RngStream) -> Result<Vec<f64>>,
{
    let d = x0.len();
    if !is_finite(x0) {
        return Err(Error::NonFinite { step: 0 });
    }
    let mut iterates = Vec::with_capacity(cfg.max_iters + 1);
    let mut steps = Vec::with_capacity(cfg.max_iters);
    iterates.push(x0.to_vec());
    let mut x = x0.to_vec();
    for t in 0..cfg.max_iters {
        let g = grad(&x, rng)?;
        check_dim(d, g.len())?;
        let xi = rng.uniform_ball(d, cfg.perturb_radius);
        for ((xj, gj), pj) in x.iter_mut().zip(&g).zip(&xi) {
            *xj -= cfg.eta * (gj + pj);
        }
        if !is_finite(&x) {
            return Err(Error::NonFinite { step: t + 1 });
        }
        steps.push(StepDiagnostic {
            grad_norm: norm(&g),
            perturb_norm: norm(&xi),
        });
        iterates.push(x.clone());
    }
    Ok((iterates, steps))
}

/// Zeroth-order perturbed SGD; consumes `T (m + 1)` value queries.
pub fn zpsgd<O: Oracle + ?Sized>(oracle: &O, x0: &[f64], cfg: &OptimizerConfig, rng: &mut RngStream) -> Result<RunRecord> {
    cfg.validate()?;
    check_dim(oracle.dim(), x0.len())?;
    let sc = cfg.smoothing()?;
    let before = oracle.queries();
    let (iterates, steps) = perturbed_loop(x0, cfg, rng, |x, r| grad_estimate(oracle, x, &sc, r))?;
    Ok(RunRecord {
        iterates,
        values: Vec::new(),
        queries_used: oracle.queries() - before,
        steps,
        terminal: None,
    })
}

/// First-order perturbed SGD on the smoothed surrogate; `T m` gradient queries.
/// With `sigma = 0` the `m` queries are all taken at the iterate.
pub fn fpsgd<O: Oracle + ?Sized>(oracle: &O, x0: &[f64], cfg: &OptimizerConfig, rng: &mut RngStream) -> Result<RunRecord> {
    cfg.validate()?;
    check_dim(oracle.dim(), x0.len())?;
    if !oracle.has_gradient() {
        return Err(Error::MissingGradient);
    }
    let before = oracle.queries();
    let (iterates, steps) = if cfg.sigma > 0.0 {
        let sc = cfg.smoothing()?;
        perturbed_loop(x0, cfg, rng, |x, r| fpsgd_grad_estimate(oracle, x, &sc, r))?
    } else {
        perturbed_loop(x0, cfg, rng, |x, _| {
            let pts = vec![x.to_vec(); cfg.batch];
            let gs = oracle.gradients(&pts)?;
            Ok(mean_of(&gs, x.len()))
        })?
    };
    Ok(RunRecord {
        iterates,
        values: Vec::new(),
        queries_used: oracle.queries() - before,
        steps,
        terminal: None,
    })
}

/// Mini-batch perturbed SGD over a stochastic gradient source; `T m` samples.
pub fn psgd<S: StochasticGradient + ?Sized>(
    sampler: &S,
    x0: &[f64],
    cfg: &OptimizerConfig,
    rng: &mut RngStream,
) -> Result<RunRecord> {
    cfg.validate()?;
    check_dim(sampler.dim(), x0.len())?;
    let before = sampler.queries();
    let (iterates, steps) = perturbed_loop(x0, cfg, rng, |x, r| {
        let gs: Vec<Vec<f64>> = (0..cfg.batch).map(|_| sampler.sample(x, r)).collect();
        Ok(mean_of(&gs, x.len()))
    })?;
    Ok(RunRecord {
        iterates,
        values: Vec::new(),
        queries_used: sampler.queries() - before,
        steps,
        terminal: None,
    })
}

/// Plain gradient descent on `f` using one gradient query per step.
pub fn gd_baseline<O: Oracle + ?Sized>(oracle: &O, x0: &[f64], eta: f64, iters: usize) -> Result<RunRecord> {
    check_dim(oracle.dim(), x0.len())?;
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(invalid("eta", format!("must be positive and finite, got {eta}")));
    }
    if !is_finite(x0) {
        return Err(Error::NonFinite { step: 0 });
    }
    let before = oracle.queries();
    let mut iterates = Vec::with_capacity(iters + 1);
    let mut steps = Vec::with_capacity(iters);
    let mut x = x0.to_vec();
    iterates.push(x.clone());
    for t in 0..iters {
        let g = oracle.gradient(&x)?;
        check_dim(x.len(), g.len())?;
        for (xj, gj) in x.iter_mut().zip(&g) {
            *xj -= eta * gj;
        }
        if !is_finite(&x) {
            return Err(Error::NonFinite { step: t + 1 });
        }
        steps.push(StepDiagnostic {
            grad_norm: norm(&g),
            perturb_norm: 0.0,
        });
        iterates.push(x.clone());
    }
    Ok(RunRecord {
        iterates,
        values: Vec::new(),
        queries_used: oracle.queries() - before,
        steps,
        terminal: None,
    })
}

fn mean_of(gs: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut sum = vec![0.0; d];
    for g in gs {
        for (s, v) in sum.iter_mut().zip(g) {
            *s += v;
        }
    }
    let m = gs.len() as f64;
    sum.into_iter().map(|s| s / m).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::FunctionPairOracle;

    fn quad() -> FunctionPairOracle {
        FunctionPairOracle::new(2, |x| x.iter().map(|v| v * v).sum())
            .unwrap()
            .with_gradient(|x| x.iter().map(|v| 2.0 * v).collect())
    }

    fn manual(eta: f64, iters: usize) -> OptimizerConfig {
        OptimizerConfig {
            eta,
            perturb_radius: 0.0,
            sigma: 0.0,
            batch: 1,
            max_iters: iters,
            epsilon: 0.1,
            ell: 2.0,
            rho: 1.0,
            bound_b: 1.0,
            delta: 0.1,
            seed: 0,
            schedule: None,
        }
    }

    #[test]
    fn schedule_values() {
        let cfg = default_config(4, 0.1, 1.0, 1.0, 1.0, 0.1).unwrap();
        assert!((cfg.sigma - 0.025_f64.sqrt()).abs() < 1e-15);
        assert_eq!(cfg.eta, 1.0);
        let s = cfg.schedule.unwrap();
        assert!((s.chi - 800.0_f64.ln()).abs() < 1e-12);
        assert_eq!(cfg.batch, 10_000);
        assert!(s.batch_theory > 1e6);
    }

    #[test]
    fn chi_floor_gives_r_eps_over_c6() {
        // d ell 2B / (rho eps delta) = 1 * 1 * 0.2 / (1 * 1 * 0.5) < e
        let cfg = default_config(1, 1.0, 1.0, 1.0, 0.1, 0.5).unwrap();
        assert_eq!(cfg.schedule.as_ref().unwrap().chi, 1.0);
        assert!((cfg.perturb_radius - 1.0 / 729.0).abs() < 1e-15);
    }

    #[test]
    fn gd_closed_form() {
        let o = quad();
        let rec = gd_baseline(&o, &[1.0, 1.0], 0.1, 10).unwrap();
        for (t, x) in rec.iterates.iter().enumerate() {
            let e = 0.8_f64.powi(t as i32);
            assert!((x[0] - e).abs() < 1e-14 && (x[1] - e).abs() < 1e-14);
        }
        assert_eq!(rec.queries_used, 10);
    }

    #[test]
    fn gd_fixed_point() {
        let o = quad();
        let rec = gd_baseline(&o, &[0.0, 0.0], 0.3, 5).unwrap();
        assert!(rec.iterates.iter().all(|x| x == &vec![0.0, 0.0]));
    }

    #[test]
    fn fpsgd_without_noise_is_gd() {
        let o = quad();
        let mut r = RngStream::new(1, 0);
        let cfg = manual(0.1, 10);
        let a = fpsgd(&o, &[1.0, 1.0], &cfg, &mut r).unwrap();
        let b = gd_baseline(&o, &[1.0, 1.0], 0.1, 10).unwrap();
        assert_eq!(a.iterates, b.iterates);
    }

    #[test]
    fn zpsgd_query_budget() {
        let o = quad();
        let mut cfg = manual(0.1, 7);
        cfg.sigma = 0.1;
        cfg.batch = 5;
        cfg.perturb_radius = 0.01;
        let rec = zpsgd(&o, &[1.0, 1.0], &cfg, &mut RngStream::new(3, 0)).unwrap();
        assert_eq!(rec.queries_used, 7 * 6);
        assert_eq!(rec.iterates.len(), 8);
    }

    #[test]
    fn zpsgd_contracts_on_quadratic() {
        let o = quad();
        let mut cfg = manual(0.25, 100);
        cfg.sigma = 0.01;
        cfg.batch = 200;
        let rec = zpsgd(&o, &[4.0, 4.0], &cfg, &mut RngStream::new(7, 0)).unwrap();
        assert!(norm(rec.last()) < 0.1, "{:?}", rec.last());
    }

    #[test]
    fn constant_function_random_walk() {
        let o = FunctionPairOracle::new(3, |_| 1.0).unwrap();
        let mut cfg = manual(0.5, 50);
        cfg.sigma = 0.1;
        cfg.batch = 3;
        cfg.perturb_radius = 0.2;
        let rec = zpsgd(&o, &[0.0; 3], &cfg, &mut RngStream::new(2, 0)).unwrap();
        for w in rec.iterates.windows(2) {
            assert!(crate::linalg::dist(&w[0], &w[1]) <= 0.5 * 0.2 + 1e-15);
        }
    }

    #[test]
    fn non_finite_aborts() {
        let o = FunctionPairOracle::new(1, |x| x[0]).unwrap().with_gradient(|x| vec![x[0] * x[0]]);
        let err = gd_baseline(&o, &[1e200], 1.0, 3).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }
}
