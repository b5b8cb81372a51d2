//! Learning a single ReLU unit `y = ReLU(x·w*) + noise`, `x ~ N(0, I)`.
//!
//! The empirical risk uses the `1/(2n)` normalization so that its
//! population counterpart has gradient `(w - w*)/2 + (theta w* - ŵ sin theta)/(2 pi)`.
//! [`population_risk`] keeps the additive constant `5/4` of the closed form
//! as written; a direct expansion gives `3/4`, so only risk differences are
//! meaningful and the experiments here compare differences.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::RngCore;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{check_dim, invalid, Result};
use crate::linalg::{dist, dot, norm, sub};
use crate::oracle::{FunctionPairOracle, TruthView};
use crate::optim::{default_config_with, zpsgd, OptimizerConfig, ScheduleOptions};

use crate::rng::RngStream;

pub fn relu(t: f64) -> f64 {
    t.max(0.0)
}

/// A dataset of `n` rows `x_i ~ N(0, I_d)` with responses
/// `y_i = ReLU(x_i·w*) + zeta_i`, `zeta_i ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReluInstance {
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub w_star: Vec<f64>,
    /// Row-major `n x d`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl ReluInstance {
    /// Draws `w*` uniformly from the sphere, then the data.
    pub fn generate(d: usize, n: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(crate::Error::ZeroDimension);
        }
        let w_star = RngStream::new(seed, 0).unit_sphere(d);
        Self::generate_with(w_star, n, seed)
    }

    pub fn generate_with(w_star: Vec<f64>, n: usize, seed: u64) -> Result<Self> {
        let d = w_star.len();
        if n == 0 {
            return Err(invalid("n", "must be positive"));
        }
        let mut rx = RngStream::new(seed, 1);
        let mut rz = RngStream::new(seed, 2);
        let x: Vec<f64> = (0..n * d).map(|_| rx.standard_normal()).collect();
        let y = x
            .chunks_exact(d)
            .map(|row| relu(dot(row, &w_star)) + rz.standard_normal())
            .collect();
        Self::from_parts(w_star, x, y, seed)
    }

    pub fn from_parts(w_star: Vec<f64>, x: Vec<f64>, y: Vec<f64>, seed: u64) -> Result<Self> {
        let d = w_star.len();
        if d == 0 {
            return Err(crate::Error::ZeroDimension);
        }
        if (norm(&w_star) - 1.0).abs() > 1e-12 {
            return Err(invalid("w_star", format!("must be a unit vector, norm is {}", norm(&w_star))));
        }
        let n = y.len();
        if n == 0 {
            return Err(invalid("y", "must be nonempty"));
        }
        check_dim(n * d, x.len())?;
        if !crate::linalg::is_finite(&x) || !crate::linalg::is_finite(&y) {
            return Err(invalid("x/y", "must be finite"));
        }
        Ok(Self {
            d,
            n,
            seed,
            w_star,
            x,
            y,
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    /// `(1/2n) sum (y_i - ReLU(x_i·w))^2`.
    pub fn empirical_risk(&self, w: &[f64]) -> f64 {
        let s: f64 = self
            .x
            .chunks_exact(self.d)
            .zip(&self.y)
            .map(|(row, yi)| {
                let e = yi - relu(dot(row, w));
                e * e
            })
            .sum();
        s / (2.0 * self.n as f64)
    }

    /// Gradient of [`Self::empirical_risk`]; the ReLU slope at 0 is taken as 0.
    pub fn empirical_risk_grad(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d];
        for (row, yi) in self.x.chunks_exact(self.d).zip(&self.y) {
            let a = dot(row, w);
            if a > 0.0 {
                let e = yi - a;
                g.iter_mut().zip(row).for_each(|(gj, xj)| *gj -= e * xj);
            }
        }
        let n = self.n as f64;
        g.into_iter().map(|v| v / n).collect()
    }
}

/// Angle between nonzero vectors in `[0, pi]`, `2 atan2(‖û - v̂‖, ‖û + v̂‖)`.
pub fn angle(u: &[f64], v: &[f64]) -> f64 {
    let (nu, nv) = (norm(u), norm(v));
    let (mut a, mut b) = (0.0, 0.0);
    for (x, y) in u.iter().zip(v) {
        let (p, q) = (x / nu, y / nv);
        a += (p - q) * (p - q);
        b += (p + q) * (p + q);
    }
    2.0 * a.sqrt().atan2(b.sqrt())
}

fn nonzero(name: &'static str, w: &[f64]) -> Result<f64> {
    let n = norm(w);
    if n > 0.0 && n.is_finite() {
        Ok(n)
    } else {
        Err(invalid(name, "must be a nonzero finite vector"))
    }
}

/// `E[ReLU(x·u) ReLU(x·v)] = ‖u‖‖v‖ (sin t + (pi - t) cos t) / (2 pi)`.
pub fn arc_cosine_kernel(u: &[f64], v: &[f64]) -> Result<f64> {
    check_dim(u.len(), v.len())?;
    let nu = nonzero("u", u)?;
    let nv = nonzero("v", v)?;
    let t = angle(u, v);
    Ok(nu * nv * (t.sin() + (PI - t) * t.cos()) / (2.0 * PI))
}

/// `‖w‖²/4 + 5/4 - K(w, w*)` as in the closed form.
pub fn population_risk(w: &[f64], w_star: &[f64]) -> Result<f64> {
    let k = arc_cosine_kernel(w, w_star)?;
    Ok(0.25 * dot(w, w) + 1.25 - k)
}

pub fn population_grad(w: &[f64], w_star: &[f64]) -> Result<Vec<f64>> {
    check_dim(w.len(), w_star.len())?;
    let nw = nonzero("w", w)?;
    let t = angle(w, w_star);
    let s = t.sin();
    Ok(w.iter()
        .zip(w_star)
        .map(|(wi, si)| 0.5 * (wi - si) + (t * si - wi / nw * s) / (2.0 * PI))
        .collect())
}

/// `I/2 - sin t / (2 pi ‖w‖) (I + ûû^T - ŵŵ^T)` with `û` the unit vector
/// along `w* - ŵ cos t`; `I/2` when the angle vanishes.
pub fn population_hess(w: &[f64], w_star: &[f64]) -> Result<DMatrix<f64>> {
    check_dim(w.len(), w_star.len())?;
    let nw = nonzero("w", w)?;
    let d = w.len();
    let t = angle(w, w_star);
    let half = DMatrix::identity(d, d) * 0.5;
    let s = t.sin();
    if t == 0.0 || s == 0.0 {
        return Ok(half);
    }
    let what: Vec<f64> = w.iter().map(|v| v / nw).collect();
    let c = t.cos();
    let raw: Vec<f64> = w_star.iter().zip(&what).map(|(a, b)| a - c * b).collect();
    let nr = norm(&raw);
    let uhat: Vec<f64> = if nr > 0.0 { raw.iter().map(|v| v / nr).collect() } else { vec![0.0; d] };
    let k = s / (2.0 * PI * nw);
    Ok(DMatrix::from_fn(d, d, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        0.5 * id - k * (id + uhat[i] * uhat[j] - what[i] * what[j])
    }))
}

/// Membership in `{w : w·w* >= 1/sqrt d, ‖w‖ <= 2}`.
pub fn in_region(w: &[f64], w_star: &[f64]) -> bool {
    dot(w, w_star) >= 1.0 / (w.len() as f64).sqrt() && norm(w) <= 2.0
}

/// Uniform draw from the region by rejection from the radius-2 ball.
pub fn sample_region(w_star: &[f64], rng: &mut RngStream) -> Vec<f64> {
    loop {
        let w = rng.uniform_ball(w_star.len(), 2.0);
        if in_region(&w, w_star) {
            return w;
        }
    }
}

/// Restriction `t^2/100 - t/(10 pi) + arctan(t)/(10 pi)` and its second
/// derivative `1/50 - (1/(5 pi)) t/(1+t^2)^2`.
pub fn nonconvex_restriction(t: f64) -> (f64, f64) {
    let g = t * t / 100.0 - t / (10.0 * PI) + t.atan() / (10.0 * PI);
    let g2 = 1.0 / 50.0 - t / (5.0 * PI * (1.0 + t * t).powi(2));
    (g, g2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OnePointReport {
    pub d: usize,
    pub samples: usize,
    pub violations: usize,
    /// Smallest `⟨grad R(w), w - w*⟩ / ‖w - w*‖²` seen.
    pub min_ratio: f64,
    pub witness: Option<Vec<f64>>,
}

/// Checks `⟨grad R(w), w - w*⟩ >= ‖w - w*‖² / 10` at uniform samples of the
/// region.
pub fn one_point_convexity_audit(w_star: &[f64], samples: usize, rng: &mut RngStream) -> Result<OnePointReport> {
    let mut violations = 0;
    let mut min_ratio = f64::INFINITY;
    let mut witness = None;
    for _ in 0..samples {
        let w = sample_region(w_star, rng);
        let g = population_grad(&w, w_star)?;
        let diff = sub(&w, w_star);
        let lhs = dot(&g, &diff);
        let rhs = dot(&diff, &diff);
        if rhs > 0.0 {
            min_ratio = min_ratio.min(lhs / rhs);
        }
        if lhs < 0.1 * rhs {
            violations += 1;
            witness.get_or_insert(w);
        }
    }
    Ok(OnePointReport {
        d: w_star.len(),
        samples,
        violations,
        min_ratio,
        witness,
    })
}

/// Truth view of the population risk.
pub struct PopulationRisk {
    pub w_star: Vec<f64>,
}

impl TruthView for PopulationRisk {
    fn dim(&self) -> usize {
        self.w_star.len()
    }
    fn value(&self, w: &[f64]) -> f64 {
        population_risk(w, &self.w_star).unwrap_or(f64::NAN)
    }
    fn gradient(&self, w: &[f64]) -> Option<Vec<f64>> {
        population_grad(w, &self.w_star).ok()
    }
    fn hessian(&self, w: &[f64]) -> Option<DMatrix<f64>> {
        population_hess(w, &self.w_star).ok()
    }
}

/// Counted oracle of the empirical risk with the population risk as truth.
/// No closeness level is declared since the closed form is off by a constant.
pub fn empirical_oracle(inst: &std::sync::Arc<ReluInstance>) -> Result<FunctionPairOracle> {
    let a = inst.clone();
    let b = inst.clone();
    FunctionPairOracle::new(inst.d, move |w| a.empirical_risk(w))?
        .with_gradient(move |w| b.empirical_risk_grad(w))
        .with_truth(
            std::sync::Arc::new(PopulationRisk {
                w_star: inst.w_star.clone(),
            }),
            0.0,
        )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRow {
    pub n: usize,
    /// Mean over trials of `sup_w |[R_n(w) - R_n(w*)] - [R(w) - R(w*)]|`.
    pub mean_gap: f64,
    pub stderr: f64,
    /// Mean of `sup_w |R_n(w) - R(w)|` with the closed-form constant.
    pub mean_raw_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapTable {
    pub d: usize,
    pub trials: usize,
    pub grid_size: usize,
    pub rows: Vec<GapRow>,
    /// Least-squares slope of `ln mean_gap` against `ln n`.
    pub slope: f64,
}

/// Least-squares slope of `ys` against `xs`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

/// Sup over a fixed seeded grid of the region of the gap between empirical
/// and population risk differences, averaged over fresh datasets.
pub fn uniform_gap_experiment(d: usize, n_list: &[usize], trials: usize, grid_size: usize, seed: u64) -> Result<GapTable> {
    if d == 0 {
        return Err(crate::Error::ZeroDimension);
    }
    if trials == 0 || grid_size == 0 || n_list.is_empty() {
        return Err(invalid("trials/grid/n_list", "must be nonempty"));
    }
    let base = RngStream::new(seed, 0);
    let w_star = base.substream(0).unit_sphere(d);
    let mut gr = base.substream(1);
    let grid: Vec<Vec<f64>> = (0..grid_size).map(|_| sample_region(&w_star, &mut gr)).collect();
    let pop0 = population_risk(&w_star, &w_star)?;
    let pop: Vec<f64> = grid.iter().map(|w| population_risk(w, &w_star)).collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(n_list.len());
    for (ni, &n) in n_list.iter().enumerate() {
        let per: Vec<(f64, f64)> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let data_seed = base.substream(2).substream((ni * trials + t) as u64).next_u64();
                let inst = ReluInstance::generate_with(w_star.clone(), n, data_seed).expect("n and w* already validated");
                let e0 = inst.empirical_risk(&w_star);
                let mut sup = 0.0_f64;
                let mut raw = 0.0_f64;
                for (w, p) in grid.iter().zip(&pop) {
                    let e = inst.empirical_risk(w);
                    sup = sup.max(((e - e0) - (p - pop0)).abs());
                    raw = raw.max((e - p).abs());
                }
                (sup, raw)
            })
            .collect();
        let m = trials as f64;
        let mean = per.iter().map(|p| p.0).sum::<f64>() / m;
        let var = per.iter().map(|p| (p.0 - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
        rows.push(GapRow {
            n,
            mean_gap: mean,
            stderr: (var / m).sqrt(),
            mean_raw_gap: per.iter().map(|p| p.1).sum::<f64>() / m,
        });
    }
    let xs: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean_gap).collect();
    Ok(GapTable {
        d,
        trials,
        grid_size,
        slope: if rows.len() >= 2 { loglog_slope(&xs, &ys) } else { f64::NAN },
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryConfig {
    pub d: usize,
    pub n: usize,
    pub eps: f64,
    pub trials: usize,
    pub seed: u64,
    /// Declared regularity: `ell = ell_scale sqrt d`, `rho = rho_scale d`, `B`.
    pub ell_scale: f64,
    pub rho_scale: f64,
    pub bound_b: f64,
    pub delta: f64,
    pub iters: usize,
    pub batch: usize,
    /// Optimize the population risk itself instead of the empirical one.
    pub population: bool,
}

impl RecoveryConfig {
    pub fn new(d: usize, n: usize, eps: f64, trials: usize, seed: u64) -> Self {
        Self {
            d,
            n,
            eps,
            trials,
            seed,
            ell_scale: 1.0,
            rho_scale: 1.0,
            bound_b: 1.0,
            delta: 0.1,
            iters: 200,
            batch: 100,
            population: false,
        }
    }

    pub fn optimizer_config(&self) -> Result<OptimizerConfig> {
        let d = self.d as f64;
        let mut cfg = default_config_with(
            self.d,
            self.eps,
            self.ell_scale * d.sqrt(),
            self.rho_scale * d,
            self.bound_b,
            self.delta,
            ScheduleOptions::default(),
        )?;
        cfg.max_iters = self.iters;
        cfg.batch = self.batch;
        cfg.seed = self.seed;
        Ok(cfg)
    }
}

impl RecoveryConfig {
    /// Hidden `w*` and dataset seed of trial `t`.
    pub fn trial_truth(&self, t: usize) -> (Vec<f64>, u64) {
        let root = RngStream::new(self.seed, t as u64);
        (root.substream(0).unit_sphere(self.d), root.substream(2).next_u64())
    }

    /// The dataset trial `t` optimizes over.
    pub fn trial_dataset(&self, t: usize) -> Result<ReluInstance> {
        let (w_star, data_seed) = self.trial_truth(t);
        ReluInstance::generate_with(w_star, self.n, data_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryTrial {
    pub w0: Vec<f64>,
    pub w_hat: Vec<f64>,
    pub error: f64,
    pub success: bool,
    pub contained_fraction: f64,
    pub queries: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryReport {
    pub config: RecoveryConfig,
    pub optimizer: OptimizerConfig,
    pub success_rate: f64,
    pub containment: f64,
    pub trials: Vec<RecoveryTrial>,
}

/// Runs ZPSGD from a random start in the region, on the empirical risk of a
/// fresh dataset per trial, and reports how often `‖ŵ - w*‖ <= eps`.
pub fn relu_recovery_experiment(cfg: &RecoveryConfig) -> Result<RecoveryReport> {
    if cfg.trials == 0 {
        return Err(invalid("trials", "must be positive"));
    }
    let ocfg = cfg.optimizer_config()?;
    let trials: Vec<RecoveryTrial> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| -> Result<RecoveryTrial> {
            let root = RngStream::new(cfg.seed, t as u64);
            let (w_star, data_seed) = cfg.trial_truth(t);
            let mut r0 = root.substream(1);
            let w0 = loop {
                let w: Vec<f64> = r0.gaussian(cfg.d, 1.0 / (cfg.d as f64).sqrt())?;
                if in_region(&w, &w_star) {
                    break w;
                }
            };
            let oracle = if cfg.population {
                let ws = w_star.clone();
                FunctionPairOracle::new(cfg.d, move |w| population_risk(w, &ws).unwrap_or(f64::NAN))?
            } else {
                let inst = std::sync::Arc::new(ReluInstance::generate_with(w_star.clone(), cfg.n, data_seed)?);
                empirical_oracle(&inst)?
            };
            let rec = zpsgd(&oracle, &w0, &ocfg, &mut root.substream(3))?;
            let contained = rec.iterates.iter().filter(|w| in_region(w, &w_star)).count();
            let error = dist(rec.last(), &w_star);
            Ok(RecoveryTrial {
                w_hat: rec.last().to_vec(),
                w0,
                error,
                success: error <= cfg.eps,
                contained_fraction: contained as f64 / rec.iterates.len() as f64,
                queries: rec.queries_used,
            })
        })
        .collect::<Result<_>>()?;
    let m = trials.len() as f64;
    Ok(RecoveryReport {
        config: cfg.clone(),
        optimizer: ocfg,
        success_rate: trials.iter().filter(|t| t.success).count() as f64 / m,
        containment: trials.iter().map(|t| t.contained_fraction).sum::<f64>() / m,
        trials,
    })
}
