//! Gaussian smoothing `f_sigma(x) = E f(x + z)`, `z ~ N(0, sigma^2 I)`, and
//! Monte Carlo estimators of its value, gradient and Hessian.
//!
//! All estimators draw their perturbations sequentially from the caller's
//! stream, evaluate the batch (possibly in parallel) and reduce in draw
//! order, so results are bit-reproducible at any thread count.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{norm, sym_spectral_norm, symmetrize};
use crate::oracle::{FunctionPairOracle, Oracle, TruthView};
use crate::rng::RngStream;
use crate::stationarity::{truth_gradient, truth_hessian};

const CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothingConfig {
    pub sigma: f64,
    pub batch: usize,
}

impl SmoothingConfig {
    pub fn new(sigma: f64, batch: usize) -> Result<Self> {
        let cfg = Self { sigma, batch };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(invalid("sigma", format!("must be positive and finite, got {}", self.sigma)));
        }
        if self.batch == 0 {
            return Err(invalid("batch", "must be at least 1"));
        }
        Ok(())
    }
}

/// Vector Monte Carlo estimate with per-coordinate standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorEstimate {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: usize,
}

impl VectorEstimate {
    /// Norm of the stderr vector, a scale for the error of `mean` in 2-norm.
    pub fn stderr_norm(&self) -> f64 {
        norm(&self.stderr)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixEstimate {
    pub mean: DMatrix<f64>,
    pub stderr: DMatrix<f64>,
    pub samples: usize,
}

impl MatrixEstimate {
    /// Frobenius norm of the entrywise stderr; bounds the spectral error scale.
    pub fn stderr_norm(&self) -> f64 {
        self.stderr.norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub samples: usize,
}

struct Moments {
    sum: Vec<f64>,
    sumsq: Vec<f64>,
    n: usize,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            sumsq: vec![0.0; len],
            n: 0,
        }
    }

    fn push(&mut self, sample: impl Iterator<Item = f64>) {
        for ((s, q), v) in self.sum.iter_mut().zip(self.sumsq.iter_mut()).zip(sample) {
            *s += v;
            *q += v * v;
        }
        self.n += 1;
    }

    fn finish(self) -> (Vec<f64>, Vec<f64>) {
        let n = self.n as f64;
        let mean: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let stderr = if self.n < 2 {
            vec![0.0; mean.len()]
        } else {
            self.sumsq
                .iter()
                .zip(&mean)
                .map(|(q, m)| ((q / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
                .collect()
        };
        (mean, stderr)
    }
}

/// Draws `count` perturbations in chunks, evaluates `f(x + z)` and hands
/// each `(z, f(x+z))` to `visit` in draw order.
fn sweep<O, V>(oracle: &O, x: &[f64], sigma: f64, count: usize, rng: &mut RngStream, mut visit: V) -> Result<()>
where
    O: Oracle + ?Sized,
    V: FnMut(&[f64], f64),
{
    let d = x.len();
    let mut done = 0;
    while done < count {
        let n = CHUNK.min(count - done);
        let zs: Vec<Vec<f64>> = (0..n).map(|_| rng.gaussian(d, sigma)).collect::<Result<_>>()?;
        let pts: Vec<Vec<f64>> = zs
            .iter()
            .map(|z| x.iter().zip(z).map(|(a, b)| a + b).collect())
            .collect();
        let vals = oracle.values(&pts);
        for (z, v) in zs.iter().zip(vals) {
            visit(z, v);
        }
        done += n;
    }
    Ok(())
}

/// Single-sample estimator `z (f(x+z) - f(x)) / sigma^2`; two value queries.
pub fn grad_sample<O: Oracle + ?Sized>(oracle: &O, x: &[f64], z: &[f64], sigma: f64) -> Result<Vec<f64>> {
    check_dim(oracle.dim(), x.len())?;
    check_dim(oracle.dim(), z.len())?;
    if !(sigma > 0.0) {
        return Err(invalid("sigma", format!("must be positive, got {sigma}")));
    }
    if !crate::linalg::is_finite(z) {
        return Err(invalid("z", "must be finite"));
    }
    let xz: Vec<f64> = x.iter().zip(z).map(|(a, b)| a + b).collect();
    let w = (oracle.value(&xz) - oracle.value(x)) / (sigma * sigma);
    Ok(z.iter().map(|zi| zi * w).collect())
}

/// Mini-batch gradient estimate of the smoothed function with standard
/// errors; `batch + 1` value queries.
pub fn grad_estimate_stats<O: Oracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    cfg: &SmoothingConfig,
    rng: &mut RngStream,
) -> Result<VectorEstimate> {
    cfg.validate()?;
    check_dim(oracle.dim(), x.len())?;
    let f0 = oracle.value(x);
    let s2 = cfg.sigma * cfg.sigma;
    let mut acc = Moments::new(x.len());
    sweep(oracle, x, cfg.sigma, cfg.batch, rng, |z, v| {
        let w = (v - f0) / s2;
        acc.push(z.iter().map(|zi| zi * w));
    })?;
    let (mean, stderr) = acc.finish();
    Ok(VectorEstimate {
        mean,
        stderr,
        samples: cfg.batch,
    })
}

/// `sum_i z_i (f(x + z_i) - f(x)) / (m sigma^2)`; `f(x)` is queried once.
pub fn grad_estimate<O: Oracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    cfg: &SmoothingConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    grad_estimate_stats(oracle, x, cfg, rng).map(|e| e.mean)
}

pub fn smoothed_value_stats<O: Oracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    cfg: &SmoothingConfig,
    rng: &mut RngStream,
) -> Result<ScalarEstimate> {
    cfg.validate()?;
    check_dim(oracle.dim(), x.len())?;
    let mut acc = Moments::new(1);
    sweep(oracle, x, cfg.sigma, cfg.batch, rng, |_, v| acc.push(std::iter::once(v)))?;
    let (mean, stderr) = acc.finish();
    Ok(ScalarEstimate {
        mean: mean[0],
        stderr: stderr[0],
        samples: cfg.batch,
    })
}

/// Monte Carlo mean of `f(x + z)`; `batch` value queries.
pub fn smoothed_value_estimate<O: Oracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    cfg: &SmoothingConfig,
    rng: &mut RngStream,
) -> Result<f64> {
    smoothed_value_stats(oracle, x, cfg, rng).map(|e| e.mean)
}

/// Hessian of the smoothed function from `E[(zz^T - sigma^2 I) / sigma^4 f(x+z)]`.
///
/// `f(x)` is subtracted from every sample; the bracket has zero mean so the
/// estimate stays unbiased and a constant `f` gives exactly zero. Costs
/// `batch + 1` value queries. The result is symmetrized.
pub fn smoothed_hessian_stats<O: Oracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    cfg: &SmoothingConfig,
    rng: &mut RngStream,
) -> Result<MatrixEstimate> {
    cfg.validate()?;
    let d = x.len();
    check_dim(oracle.dim(), d)?;
    let f0 = oracle.value(x);
    let s2 = cfg.sigma * cfg.sigma;
    let s4 = s2 * s2;
    let mut acc = Moments::new(d * d);
    sweep(oracle, x, cfg.sigma, cfg.batch, rng, |z, v| {
        let w = (v - f0) / s4;
        acc.push((0..d * d).map(|k| {
            let (i, j) = (k % d, k / d);
            let e = z[i] * z[j] - if i == j { s2 } else { 0.0 };
            e * w
        }));
    })?;
    let (mean, stderr) = acc.finish();
    Ok(MatrixEstimate {
        mean: symmetrize(&DMatrix::from_column_slice(d, d, &mean)),
        stderr: DMatrix::from_column_slice(d, d, &stderr),
        samples: cfg.batch,
    })
}

pub fn smoothed_hessian_estimate<O: Oracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    cfg: &SmoothingConfig,
    rng: &mut RngStream,
) -> Result<DMatrix<f64>> {
    smoothed_hessian_stats(oracle, x, cfg, rng).map(|e| e.mean)
}

/// Mean of `batch` gradient queries at `x + z_i`.
pub fn fpsgd_grad_estimate<O: Oracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    cfg: &SmoothingConfig,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let d = x.len();
    check_dim(oracle.dim(), d)?;
    if !oracle.has_gradient() {
        return Err(Error::MissingGradient);
    }
    let mut sum = vec![0.0; d];
    let mut done = 0;
    while done < cfg.batch {
        let n = CHUNK.min(cfg.batch - done);
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                rng.gaussian(d, cfg.sigma)
                    .map(|z| x.iter().zip(z).map(|(a, b)| a + b).collect())
            })
            .collect::<Result<_>>()?;
        for g in oracle.gradients(&pts)? {
            check_dim(d, g.len())?;
            for (s, gi) in sum.iter_mut().zip(g) {
                *s += gi;
            }
        }
        done += n;
    }
    let m = cfg.batch as f64;
    Ok(sum.into_iter().map(|s| s / m).collect())
}

/// Parameters of a smoothing-bound audit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditParams {
    pub rho: f64,
    pub nu: f64,
    pub sigma: f64,
    pub inner_samples: usize,
    /// Monte Carlo slack in standard errors.
    pub slack: f64,
}

impl AuditParams {
    pub fn new(rho: f64, nu: f64, sigma: f64) -> Self {
        Self {
            rho,
            nu,
            sigma,
            inner_samples: 1_000_000,
            slack: 4.0,
        }
    }

    /// `sqrt(2/pi) nu / sigma + rho d sigma^2`.
    pub fn grad_bound(&self, d: usize) -> f64 {
        (2.0 / std::f64::consts::PI).sqrt() * self.nu / self.sigma + self.rho * d as f64 * self.sigma * self.sigma
    }

    /// `rho sqrt(d) sigma + 2 nu / sigma^2`.
    pub fn hess_bound(&self, d: usize) -> f64 {
        self.rho * (d as f64).sqrt() * self.sigma + 2.0 * self.nu / (self.sigma * self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointAudit {
    pub x: Vec<f64>,
    pub grad_dev: f64,
    pub grad_bound: f64,
    pub grad_mc_err: f64,
    pub hess_dev: f64,
    pub hess_bound: f64,
    pub hess_mc_err: f64,
    pub grad_violation: bool,
    pub hess_violation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothingAudit {
    pub params: AuditParams,
    pub dim: usize,
    pub points: Vec<PointAudit>,
    pub violations: usize,
    pub max_grad_dev: f64,
    pub max_hess_dev: f64,
    pub grad_bound: f64,
    pub hess_bound: f64,
}

/// Uncounted view of a pair oracle for audits.
struct Peek<'a>(&'a FunctionPairOracle);

impl Oracle for Peek<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.0.peek_value(x)
    }
    fn queries(&self) -> u64 {
        0
    }
}

/// Compares high-accuracy Monte Carlo derivatives of the smoothed `f` with
/// the true derivatives of `F` at every point and checks them against the
/// explicit smoothing bounds. Does not touch the query counter.
pub fn verify_smoothing_bounds(
    oracle: &FunctionPairOracle,
    params: &AuditParams,
    points: &[Vec<f64>],
    rng: &mut RngStream,
) -> Result<SmoothingAudit> {
    let truth: &dyn TruthView = oracle.truth_view().ok_or(Error::MissingTruth)?;
    if !(params.rho >= 0.0) || !(params.nu >= 0.0) {
        return Err(invalid("params", "rho and nu must be nonnegative"));
    }
    let d = oracle.dim();
    let cfg = SmoothingConfig::new(params.sigma, params.inner_samples)?;
    let gb = params.grad_bound(d);
    let hb = params.hess_bound(d);
    let peek = Peek(oracle);
    let mut out = Vec::with_capacity(points.len());
    for (k, x) in points.iter().enumerate() {
        check_dim(d, x.len())?;
        let mut r = rng.substream(k as u64);
        let ge = grad_estimate_stats(&peek, x, &cfg, &mut r)?;
        let he = smoothed_hessian_stats(&peek, x, &cfg, &mut r)?;
        let g_true = truth_gradient(truth, x)?;
        let h_true = truth_hessian(truth, x)?;
        let grad_dev = crate::linalg::dist(&ge.mean, &g_true);
        let hess_dev = sym_spectral_norm(&(&he.mean - &h_true));
        let grad_mc_err = params.slack * ge.stderr_norm();
        let hess_mc_err = params.slack * he.stderr_norm();
        out.push(PointAudit {
            x: x.clone(),
            grad_dev,
            grad_bound: gb,
            grad_mc_err,
            hess_dev,
            hess_bound: hb,
            hess_mc_err,
            grad_violation: grad_dev > gb + grad_mc_err,
            hess_violation: hess_dev > hb + hess_mc_err,
        });
    }
    let violations = out.iter().filter(|p| p.grad_violation || p.hess_violation).count();
    Ok(SmoothingAudit {
        params: *params,
        dim: d,
        max_grad_dev: out.iter().map(|p| p.grad_dev).fold(0.0, f64::max),
        max_hess_dev: out.iter().map(|p| p.hess_dev).fold(0.0, f64::max),
        points: out,
        violations,
        grad_bound: gb,
        hess_bound: hb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::FunctionPairOracle;

    fn sq(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    #[test]
    fn sample_on_quadratic_by_hand() {
        let o = FunctionPairOracle::new(2, sq).unwrap();
        let g = grad_sample(&o, &[1.0, 0.0], &[0.5, 0.5], 1.0).unwrap();
        assert_eq!(g, vec![0.75, 0.75]);
        assert_eq!(o.queries(), 2);
    }

    #[test]
    fn sample_on_linear() {
        let a = [0.3, -1.2, 2.0];
        let o = FunctionPairOracle::new(3, move |x| crate::linalg::dot(&a, x)).unwrap();
        let z = [0.25, -0.5, 1.0];
        let g = grad_sample(&o, &[7.0, 1.0, -3.0], &z, 1.0).unwrap();
        let az = crate::linalg::dot(&a, &z);
        for (gi, zi) in g.iter().zip(z) {
            assert!((gi - zi * az).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_gives_exact_zero() {
        let o = FunctionPairOracle::new(3, |_| 4.2).unwrap();
        let mut r = RngStream::new(1, 0);
        let cfg = SmoothingConfig::new(0.3, 7).unwrap();
        assert_eq!(grad_estimate(&o, &[1.0, 2.0, 3.0], &cfg, &mut r).unwrap(), vec![0.0; 3]);
        assert_eq!(o.queries(), 8);
        assert_eq!(smoothed_value_estimate(&o, &[0.0; 3], &cfg, &mut r).unwrap(), 4.2);
        let h = smoothed_hessian_estimate(&o, &[0.0; 3], &cfg, &mut r).unwrap();
        assert_eq!(h, DMatrix::zeros(3, 3));
    }

    #[test]
    fn rejects_bad_config() {
        assert!(SmoothingConfig::new(0.1, 0).is_err());
        assert!(SmoothingConfig::new(0.0, 1).is_err());
        assert!(SmoothingConfig::new(-1.0, 1).is_err());
    }

    #[test]
    fn batch_of_one_is_a_single_sample() {
        let o = FunctionPairOracle::new(2, sq).unwrap();
        let cfg = SmoothingConfig::new(0.2, 1).unwrap();
        let mut r1 = RngStream::new(5, 2);
        let mut r2 = RngStream::new(5, 2);
        let est = grad_estimate(&o, &[0.3, -0.1], &cfg, &mut r1).unwrap();
        let z = r2.gaussian(2, 0.2).unwrap();
        let one = grad_sample(&o, &[0.3, -0.1], &z, 0.2).unwrap();
        assert_eq!(est, one);
    }

    #[test]
    fn missing_gradient_rejected() {
        let o = FunctionPairOracle::new(2, sq).unwrap();
        let cfg = SmoothingConfig::new(0.2, 3).unwrap();
        let mut r = RngStream::new(5, 2);
        assert_eq!(
            fpsgd_grad_estimate(&o, &[0.0, 0.0], &cfg, &mut r),
            Err(Error::MissingGradient)
        );
    }

    #[test]
    fn constant_gradient_field_is_exact() {
        let o = FunctionPairOracle::new(2, |x| 3.0 * x[0] - x[1]).unwrap().with_gradient(|_| vec![3.0, -1.0]);
        let cfg = SmoothingConfig::new(0.5, 5).unwrap();
        let mut r = RngStream::new(5, 2);
        assert_eq!(fpsgd_grad_estimate(&o, &[1.0, 1.0], &cfg, &mut r).unwrap(), vec![3.0, -1.0]);
        assert_eq!(o.queries(), 5);
    }

    #[test]
    fn hessian_output_is_symmetric() {
        let o = FunctionPairOracle::new(3, |x| x[0].sin() * x[1] + x[2].powi(3)).unwrap();
        let cfg = SmoothingConfig::new(0.4, 50).unwrap();
        let mut r = RngStream::new(9, 0);
        let h = smoothed_hessian_estimate(&o, &[0.1, 0.2, 0.3], &cfg, &mut r).unwrap();
        assert_eq!(h, h.transpose());
    }
}
