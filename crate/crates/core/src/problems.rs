//! Small analytic function pairs used by the experiments and tests.
//!
//! Each pair couples a smooth `F` (exposed through a truth view with exact
//! gradient and Hessian) with an observed `f = F + nu * ripple`, where the
//! ripple is bounded by one so that `|f - F| <= nu` everywhere.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{invalid, Result};
use crate::oracle::{ClosureTruth, FunctionPairOracle, StochasticGradient, TruthView};
use crate::rng::RngStream;

/// Default ripple frequency.
pub const RIPPLE_OMEGA: f64 = 50.0;

fn check_nu(nu: f64) -> Result<()> {
    if nu >= 0.0 && nu.is_finite() {
        Ok(())
    } else {
        Err(invalid("nu", format!("must be finite and nonnegative, got {nu}")))
    }
}

/// Mean of `cos(omega x_i + phase_i)`; bounded by one in absolute value.
#[derive(Debug, Clone, PartialEq)]
pub struct Ripple {
    pub omega: f64,
    pub phase: Vec<f64>,
}

impl Ripple {
    pub fn new(d: usize, omega: f64) -> Self {
        Self {
            omega,
            phase: vec![0.0; d],
        }
    }

    /// Frequency uniform in `[omega/2, 3 omega/2]`, phases uniform.
    pub fn random(d: usize, omega: f64, rng: &mut RngStream) -> Self {
        let w = rng.uniform_range(0.5 * omega, 1.5 * omega);
        let phase = (0..d).map(|_| rng.uniform_range(0.0, std::f64::consts::TAU)).collect();
        Self { omega: w, phase }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.phase)
            .map(|(v, p)| (self.omega * v + p).cos())
            .sum::<f64>()
            / x.len() as f64
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        let k = x.len() as f64;
        x.iter()
            .zip(&self.phase)
            .map(|(v, p)| -self.omega * (self.omega * v + p).sin() / k)
            .collect()
    }
}

/// `f = F + nu * ripple` with the gradient field of `f` attached.
pub fn rippled(truth: ClosureTruth, nu: f64, ripple: Ripple) -> Result<FunctionPairOracle> {
    check_nu(nu)?;
    let dim = truth.dim;
    if ripple.phase.len() != dim {
        return Err(crate::error::Error::DimensionMismatch {
            expected: dim,
            got: ripple.phase.len(),
        });
    }
    let truth: Arc<ClosureTruth> = Arc::new(truth);
    let tv = truth.clone();
    let tg = truth.clone();
    let rv = ripple.clone();
    FunctionPairOracle::new(dim, move |x| tv.value(x) + nu * rv.value(x))?
        .with_gradient(move |x| {
            let mut g = tg.gradient(x).expect("closure truth carries a gradient");
            for (gi, ri) in g.iter_mut().zip(ripple.grad(x)) {
                *gi += nu * ri;
            }
            g
        })
        .with_truth(truth, nu)
}

/// `F(x) = ‖x‖^2` on `R^d`.
pub fn quadratic_truth(d: usize) -> ClosureTruth {
    ClosureTruth::new(d, |x| x.iter().map(|v| v * v).sum())
        .with_gradient(|x| x.iter().map(|v| 2.0 * v).collect())
        .with_hessian(|x| DMatrix::identity(x.len(), x.len()) * 2.0)
}

pub fn quadratic(d: usize, nu: f64) -> Result<FunctionPairOracle> {
    rippled(quadratic_truth(d), nu, Ripple::new(d, RIPPLE_OMEGA))
}

/// `F(x) = (x_1^2 - 1)^2 + sum_{i>1} x_i^2`; minima at `±e_1`, saddle at 0.
pub fn double_well_truth(d: usize) -> ClosureTruth {
    ClosureTruth::new(d, |x| {
        let a = x[0] * x[0] - 1.0;
        a * a + x[1..].iter().map(|v| v * v).sum::<f64>()
    })
    .with_gradient(|x| {
        let mut g: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        g[0] = 4.0 * x[0] * (x[0] * x[0] - 1.0);
        g
    })
    .with_hessian(|x| {
        let d = x.len();
        let mut h = DMatrix::identity(d, d) * 2.0;
        h[(0, 0)] = 12.0 * x[0] * x[0] - 4.0;
        h
    })
}

/// Rippled double well with frequency [`RIPPLE_OMEGA`].
pub fn double_well(d: usize, nu: f64) -> Result<FunctionPairOracle> {
    double_well_with(d, nu, RIPPLE_OMEGA)
}

pub fn double_well_with(d: usize, nu: f64, omega: f64) -> Result<FunctionPairOracle> {
    rippled(double_well_truth(d), nu, Ripple::new(d, omega))
}

/// Double well with a seeded random ripple.
pub fn double_well_seeded(d: usize, nu: f64, rng: &mut RngStream) -> Result<FunctionPairOracle> {
    let ripple = Ripple::random(d, RIPPLE_OMEGA, rng);
    rippled(double_well_truth(d), nu, ripple)
}

/// One-dimensional quartic `(x^2 - 1)^2` plus ripple.
pub fn quartic(nu: f64) -> Result<FunctionPairOracle> {
    double_well(1, nu)
}

/// `F(x) = ‖x‖^2 / 2 + sum sin(x_i)`; its Hessian is 1-Lipschitz.
pub fn sine_bowl_truth(d: usize) -> ClosureTruth {
    ClosureTruth::new(d, |x| x.iter().map(|v| 0.5 * v * v + v.sin()).sum())
        .with_gradient(|x| x.iter().map(|v| v + v.cos()).collect())
        .with_hessian(|x| {
            let diag: Vec<f64> = x.iter().map(|v| 1.0 - v.sin()).collect();
            DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag))
        })
}

pub fn sine_bowl(d: usize, nu: f64) -> Result<FunctionPairOracle> {
    rippled(sine_bowl_truth(d), nu, Ripple::new(d, RIPPLE_OMEGA))
}

/// `F(x) = (x_1^2 - 0.1 x_2^2) / 2`, strict saddle at the origin.
pub fn saddle_truth() -> ClosureTruth {
    ClosureTruth::new(2, |x| 0.5 * (x[0] * x[0] - 0.1 * x[1] * x[1]))
        .with_gradient(|x| vec![x[0], -0.1 * x[1]])
        .with_hessian(|_| DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.1]))
}

pub fn saddle() -> Result<FunctionPairOracle> {
    rippled(saddle_truth(), 0.0, Ripple::new(2, RIPPLE_OMEGA))
}

/// Exact gradient of a truth view plus isotropic Gaussian noise.
pub struct NoisyGradient {
    truth: Arc<dyn TruthView>,
    noise_sd: f64,
    counter: AtomicU64,
}

impl NoisyGradient {
    /// `noise_sd` is the per-coordinate standard deviation (0 for exact).
    pub fn new(truth: Arc<dyn TruthView>, noise_sd: f64) -> Result<Self> {
        if !(noise_sd >= 0.0) {
            return Err(invalid("noise_sd", format!("must be nonnegative, got {noise_sd}")));
        }
        if truth.gradient(&vec![0.0; truth.dim()]).is_none() {
            return Err(crate::error::Error::MissingGradient);
        }
        Ok(Self {
            truth,
            noise_sd,
            counter: AtomicU64::new(0),
        })
    }
}

impl StochasticGradient for NoisyGradient {
    fn dim(&self) -> usize {
        self.truth.dim()
    }

    fn sample(&self, x: &[f64], rng: &mut RngStream) -> Vec<f64> {
        self.counter.fetch_add(1, Ordering::Relaxed);
        let mut g = self.truth.gradient(x).expect("checked at construction");
        if self.noise_sd > 0.0 {
            for gi in &mut g {
                *gi += self.noise_sd * rng.standard_normal();
            }
        }
        g
    }

    fn queries(&self) -> u64 {
        self.counter.load(Ordering::SeqCst)
    }
}
