//! Query-counted access to the observed function `f` (and optionally its
//! gradient field), kept apart from the privileged view of the hidden
//! smooth function `F` used only by verification code.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, invalid, Error, Result};
use crate::rng::RngStream;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Privileged evaluator for the hidden function `F`.
///
/// Only verification code receives one of these. Derivatives are optional;
/// verifiers fall back to finite differences of whatever is provided.
pub trait TruthView: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn hessian(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }

    fn hvp(&self, x: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        self.hessian(x)
            .map(|h| (h * DVector::from_column_slice(v)).as_slice().to_vec())
    }
}

/// The only surface optimizers see: counted value and gradient queries.
pub trait Oracle: Sync {
    fn dim(&self) -> usize;

    /// One value query of `f`.
    fn value(&self, x: &[f64]) -> f64;

    /// One gradient query of `f`.
    fn gradient(&self, _x: &[f64]) -> Result<Vec<f64>> {
        Err(Error::MissingGradient)
    }

    fn has_gradient(&self) -> bool {
        false
    }

    fn queries(&self) -> u64;

    /// Evaluates a batch, possibly in parallel; results are in input order
    /// and the counter advances by exactly `xs.len()`.
    fn values(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs.par_iter().map(|x| self.value(x)).collect()
    }

    fn gradients(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.par_iter().map(|x| self.gradient(x)).collect()
    }
}

/// Stochastic gradient source `g(x; theta)` with `E g = grad f`.
pub trait StochasticGradient: Sync {
    fn dim(&self) -> usize;

    /// Draws one sample; each call is one query.
    fn sample(&self, x: &[f64], rng: &mut RngStream) -> Vec<f64>;

    fn queries(&self) -> u64;
}

pub struct FunctionPairOracle {
    dim: usize,
    value_fn: ScalarFn,
    grad_fn: Option<VectorFn>,
    truth: Option<Arc<dyn TruthView>>,
    nu: f64,
    counter: AtomicU64,
}

impl fmt::Debug for FunctionPairOracle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FunctionPairOracle")
            .field("dim", &self.dim)
            .field("has_gradient", &self.grad_fn.is_some())
            .field("has_truth", &self.truth.is_some())
            .field("nu", &self.nu)
            .field("queries", &self.queries())
            .finish()
    }
}

impl FunctionPairOracle {
    pub fn new<F>(dim: usize, f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::ZeroDimension);
        }
        Ok(Self {
            dim,
            value_fn: Arc::new(f),
            grad_fn: None,
            truth: None,
            nu: 0.0,
            counter: AtomicU64::new(0),
        })
    }

    pub fn with_gradient<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.grad_fn = Some(Arc::new(g));
        self
    }

    pub fn with_truth(mut self, truth: Arc<dyn TruthView>, nu: f64) -> Result<Self> {
        check_dim(self.dim, truth.dim())?;
        if !(nu >= 0.0) {
            return Err(invalid("nu", format!("must be nonnegative, got {nu}")));
        }
        self.truth = Some(truth);
        self.nu = nu;
        Ok(self)
    }

    /// Declared pointwise closeness `sup |f - F|`.
    pub fn nu(&self) -> f64 {
        self.nu
    }

    /// Verification-only access to `F`.
    pub fn truth_view(&self) -> Option<&dyn TruthView> {
        self.truth.as_deref()
    }

    pub fn truth_arc(&self) -> Option<Arc<dyn TruthView>> {
        self.truth.clone()
    }

    pub fn reset_counter(&self) {
        self.counter.store(0, Ordering::SeqCst);
    }

    /// Uncounted evaluation of `f` for audits.
    pub fn peek_value(&self, x: &[f64]) -> f64 {
        (self.value_fn)(x)
    }

    /// Largest `|f - F|` over `points` (uncounted).
    pub fn max_pointwise_gap(&self, points: &[Vec<f64>]) -> Result<f64> {
        let truth = self.truth.as_ref().ok_or(Error::MissingTruth)?;
        Ok(points
            .par_iter()
            .map(|x| ((self.value_fn)(x) - truth.value(x)).abs())
            .reduce(|| 0.0, f64::max))
    }
}

impl Oracle for FunctionPairOracle {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.counter.fetch_add(1, Ordering::Relaxed);
        (self.value_fn)(x)
    }

    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self.grad_fn.as_ref().ok_or(Error::MissingGradient)?;
        self.counter.fetch_add(1, Ordering::Relaxed);
        Ok(g(x))
    }

    fn has_gradient(&self) -> bool {
        self.grad_fn.is_some()
    }

    fn queries(&self) -> u64 {
        self.counter.load(Ordering::SeqCst)
    }
}

/// Builds an oracle for `f` on `R^dim`, optionally paired with a truth view.
pub fn make_pair<F>(
    dim: usize,
    f: F,
    truth: Option<Arc<dyn TruthView>>,
    nu: f64,
) -> Result<FunctionPairOracle>
where
    F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
{
    let oracle = FunctionPairOracle::new(dim, f)?;
    match truth {
        Some(t) => oracle.with_truth(t, nu),
        None if nu >= 0.0 => Ok(oracle),
        None => Err(invalid("nu", format!("must be nonnegative, got {nu}"))),
    }
}

pub fn reset_counter(oracle: &FunctionPairOracle) {
    oracle.reset_counter()
}

/// Truth view assembled from closures.
pub struct ClosureTruth {
    pub dim: usize,
    pub value: ScalarFn,
    pub gradient: Option<VectorFn>,
    pub hessian: Option<MatrixFn>,
}

impl ClosureTruth {
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        Self {
            dim,
            value: Arc::new(f),
            gradient: None,
            hessian: None,
        }
    }

    pub fn with_gradient<G>(mut self, g: G) -> Self
    where
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.gradient = Some(Arc::new(g));
        self
    }

    pub fn with_hessian<H>(mut self, h: H) -> Self
    where
        H: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    {
        self.hessian = Some(Arc::new(h));
        self
    }
}

impl TruthView for ClosureTruth {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.gradient.as_ref().map(|g| g(x))
    }

    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        self.hessian.as_ref().map(|h| h(x))
    }
}
