//! Adversarial pair `(F, f)` hiding a direction `v`.
//!
//! Scale-free hidden function `F(u) = h(sin u) + ‖sin u‖²` with
//! `h(y) = g1(mu v·y) g2(mu ‖y - (v·y) v‖)`; the scaled pair is
//! `F~(x) = eps r F(x / r)`, `r = sqrt(eps / rho)`. The observed `f~`
//! replaces `F~` by `eps r ‖sin(x / r)‖²` on the band (or on the whole ball
//! for the information-theoretic variant), which does not depend on `v`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{dist, dot, norm, sym_eigenvalues, sym_spectral_norm};
use crate::oracle::{FunctionPairOracle, Oracle, TruthView};
use crate::rng::RngStream;
use crate::stationarity::{check_sosp, StationarityReport};

pub const DEFAULT_MU: f64 = 300.0;

/// `(-16|x|^5 + 48x^4 - 48|x|^3 + 16x^2) 1{|x| < 1}`.
pub fn g1(x: f64) -> f64 {
    let t = x.abs();
    if t >= 1.0 {
        return 0.0;
    }
    t * t * (16.0 + t * (-48.0 + t * (48.0 - 16.0 * t)))
}

pub fn g1_prime(x: f64) -> f64 {
    let t = x.abs();
    if t >= 1.0 {
        return 0.0;
    }
    let pos = -16.0 * t * (t - 1.0) * (t - 1.0) * (5.0 * t - 2.0);
    if x < 0.0 {
        -pos
    } else {
        pos
    }
}

pub fn g1_second(x: f64) -> f64 {
    let t = x.abs();
    if t >= 1.0 {
        return 0.0;
    }
    32.0 + t * (-288.0 + t * (576.0 - 320.0 * t))
}

/// `(3x^4 - 8|x|^3 + 6x^2 - 1) 1{|x| < 1}`.
pub fn g2(x: f64) -> f64 {
    let t = x.abs();
    if t >= 1.0 {
        return 0.0;
    }
    -1.0 + t * t * (6.0 + t * (-8.0 + 3.0 * t))
}

pub fn g2_prime(x: f64) -> f64 {
    x * g2_prime_over_x(x)
}

/// `g2'(x) / x = 12 (1 - |x|)^2`, finite at 0.
pub fn g2_prime_over_x(x: f64) -> f64 {
    let t = x.abs();
    if t >= 1.0 {
        return 0.0;
    }
    12.0 * (1.0 - t) * (1.0 - t)
}

pub fn g2_second(x: f64) -> f64 {
    let t = x.abs();
    if t >= 1.0 {
        return 0.0;
    }
    12.0 + t * (-48.0 + 36.0 * t)
}

/// Splits `y` into its coordinate `p = v·y` along `v` and the orthogonal
/// remainder `w = y - p v`.
fn split(y: &[f64], v: &[f64]) -> (f64, Vec<f64>) {
    let p = dot(y, v);
    let w = y.iter().zip(v).map(|(a, b)| a - p * b).collect();
    (p, w)
}

pub fn h_value(y: &[f64], v: &[f64], mu: f64) -> f64 {
    let (p, w) = split(y, v);
    let a = g1(mu * p);
    if a == 0.0 {
        return 0.0;
    }
    a * g2(mu * norm(&w))
}

pub fn h_grad(y: &[f64], v: &[f64], mu: f64) -> Vec<f64> {
    let (p, w) = split(y, v);
    let t = mu * norm(&w);
    let h1 = g1(mu * p);
    let dh1 = mu * g1_prime(mu * p);
    let h2 = g2(t);
    let q = mu * mu * g2_prime_over_x(t);
    v.iter().zip(&w).map(|(vi, wi)| dh1 * h2 * vi + h1 * q * wi).collect()
}

pub fn h_hess(y: &[f64], v: &[f64], mu: f64) -> DMatrix<f64> {
    let d = y.len();
    let (p, w) = split(y, v);
    let s = norm(&w);
    let t = mu * s;
    let h1 = g1(mu * p);
    let dh1 = mu * g1_prime(mu * p);
    let ddh1 = mu * mu * g1_second(mu * p);
    let h2 = g2(t);
    let q = mu * mu * g2_prime_over_x(t);
    // h2'' - h2'/s = 24 mu^2 t (t - 1), multiplies w w^T / s^2
    let k = if s > 0.0 && t < 1.0 {
        24.0 * mu * mu * t * (t - 1.0) / (s * s)
    } else {
        0.0
    };
    DMatrix::from_fn(d, d, |i, j| {
        let pij = if i == j { 1.0 } else { 0.0 } - v[i] * v[j];
        ddh1 * h2 * v[i] * v[j] + dh1 * q * (v[i] * w[j] + w[i] * v[j]) + h1 * (k * w[i] * w[j] + q * pij)
    })
}

/// `H_h(y) e` without forming the matrix.
pub fn h_hess_vec(y: &[f64], v: &[f64], mu: f64, e: &[f64]) -> Vec<f64> {
    let (p, w) = split(y, v);
    let s = norm(&w);
    let t = mu * s;
    let h1 = g1(mu * p);
    let dh1 = mu * g1_prime(mu * p);
    let ddh1 = mu * mu * g1_second(mu * p);
    let h2 = g2(t);
    let q = mu * mu * g2_prime_over_x(t);
    let k = if s > 0.0 && t < 1.0 {
        24.0 * mu * mu * t * (t - 1.0) / (s * s)
    } else {
        0.0
    };
    let ve = dot(v, e);
    let we = dot(&w, e);
    (0..y.len())
        .map(|i| {
            ddh1 * h2 * v[i] * ve + dh1 * q * (v[i] * we + w[i] * ve) + h1 * (k * w[i] * we + q * (e[i] - v[i] * ve))
        })
        .collect()
}

/// `t` reduced modulo `pi` into `[-pi/2, pi/2]` (two-part Cody-Waite).
pub fn reduce_mod_pi(t: f64) -> f64 {
    const PI_LO: f64 = 1.224_646_799_147_353_2e-16;
    let k = (t / PI).round();
    let u = (-k).mul_add(PI, t);
    (-k).mul_add(PI_LO, u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    PolynomialQuery,
    InformationTheoretic,
}

/// Region of the fundamental cube a point falls in after reduction.
/// `Band` lies inside the ball; `Ball` is the rest of the ball.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionLabel {
    Ball,
    Band,
    Padding,
}

impl RegionLabel {
    pub fn in_ball(self) -> bool {
        matches!(self, RegionLabel::Ball | RegionLabel::Band)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Classification {
    pub label: RegionLabel,
    /// The raw point lay outside the fundamental cube and was reduced.
    pub reduced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HardInstanceParams {
    pub d: usize,
    pub epsilon: f64,
    pub rho: f64,
    pub mu: f64,
    pub variant: Variant,
    v: Vec<f64>,
}

impl HardInstanceParams {
    /// Draws the hidden direction uniformly from the unit sphere.
    pub fn new(d: usize, epsilon: f64, rho: f64, mu: f64, variant: Variant, rng: &mut RngStream) -> Result<Self> {
        if d == 0 {
            return Err(Error::ZeroDimension);
        }
        let v = rng.unit_sphere(d);
        Self::with_direction(epsilon, rho, mu, variant, v)
    }

    pub fn with_direction(epsilon: f64, rho: f64, mu: f64, variant: Variant, v: Vec<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::ZeroDimension);
        }
        if !(epsilon > 0.0) || !(rho > 0.0) || !epsilon.is_finite() || !rho.is_finite() {
            return Err(invalid("epsilon/rho", "must be positive and finite"));
        }
        if !(mu >= 3.0) || !mu.is_finite() {
            return Err(invalid("mu", format!("must be at least 3, got {mu}")));
        }
        if (norm(&v) - 1.0).abs() > 1e-12 {
            return Err(invalid("v", format!("must be a unit vector, norm is {}", norm(&v))));
        }
        Ok(Self {
            d: v.len(),
            epsilon,
            rho,
            mu,
            variant,
            v,
        })
    }

    /// Same instance with `eps = rho = 1`, i.e. `r = 1`.
    pub fn scale_free(&self) -> Self {
        Self {
            epsilon: 1.0,
            rho: 1.0,
            ..self.clone()
        }
    }

    /// Same construction with a different hidden direction.
    pub fn with_other_direction(&self, v: Vec<f64>) -> Result<Self> {
        check_dim(self.d, v.len())?;
        Self::with_direction(self.epsilon, self.rho, self.mu, self.variant, v)
    }

    /// The hidden direction. Verification code only.
    pub fn hidden_direction(&self) -> &[f64] {
        &self.v
    }

    /// Proof constants assume `mu = 300`.
    pub fn mu_is_nonstandard(&self) -> bool {
        self.mu != DEFAULT_MU
    }

    pub fn scale_r(&self) -> f64 {
        (self.epsilon / self.rho).sqrt()
    }

    /// Value scale `eps r`.
    pub fn value_scale(&self) -> f64 {
        self.epsilon * self.scale_r()
    }

    /// Scaled ball radius `3 r / mu`.
    pub fn ball_radius(&self) -> f64 {
        3.0 * self.scale_r() / self.mu
    }

    /// Band half-width `ln d / sqrt d` on `⟨sin(x/r), v⟩`.
    pub fn band_threshold(&self) -> f64 {
        (self.d as f64).ln() / (self.d as f64).sqrt()
    }

    /// Declared closeness `sup |f~ - F~| <= eps r` (from `|h| <= 1`).
    pub fn declared_nu(&self) -> f64 {
        self.value_scale()
    }

    /// Reduced scale-free coordinates `u = (x / r) mod pi` and whether any
    /// coordinate needed reduction.
    pub fn reduce(&self, x: &[f64]) -> (Vec<f64>, bool) {
        let r = self.scale_r();
        let mut reduced = false;
        let u = x
            .iter()
            .map(|xi| {
                let t = xi / r;
                if t.abs() <= PI / 2.0 {
                    t
                } else {
                    reduced = true;
                    reduce_mod_pi(t)
                }
            })
            .collect();
        (u, reduced)
    }

    fn label_u(&self, u: &[f64], y: &[f64]) -> RegionLabel {
        if norm(u) > 3.0 / self.mu {
            RegionLabel::Padding
        } else if dot(y, &self.v).abs() <= self.band_threshold() {
            RegionLabel::Band
        } else {
            RegionLabel::Ball
        }
    }

    pub fn classify(&self, x: &[f64]) -> Classification {
        let (u, reduced) = self.reduce(x);
        let y: Vec<f64> = u.iter().map(|t| t.sin()).collect();
        Classification {
            label: self.label_u(&u, &y),
            reduced,
        }
    }

    /// Whether `f~(x)` is the same for every hidden direction.
    pub fn non_informative(&self, x: &[f64]) -> bool {
        match self.variant {
            Variant::InformationTheoretic => true,
            Variant::PolynomialQuery => self.classify(x).label != RegionLabel::Ball,
        }
    }

    fn replaced(&self, label: RegionLabel) -> bool {
        match self.variant {
            Variant::PolynomialQuery => label == RegionLabel::Band,
            Variant::InformationTheoretic => label.in_ball(),
        }
    }

    /// Hidden `F~(x)`.
    pub fn hard_big_f(&self, x: &[f64]) -> f64 {
        let (u, _) = self.reduce(x);
        let y: Vec<f64> = u.iter().map(|t| t.sin()).collect();
        self.value_scale() * (h_value(&y, &self.v, self.mu) + dot(&y, &y))
    }

    /// Observed `f~(x)`.
    pub fn hard_f(&self, x: &[f64]) -> f64 {
        let (u, _) = self.reduce(x);
        let y: Vec<f64> = u.iter().map(|t| t.sin()).collect();
        let base = dot(&y, &y);
        if self.replaced(self.label_u(&u, &y)) {
            self.value_scale() * base
        } else {
            self.value_scale() * (h_value(&y, &self.v, self.mu) + base)
        }
    }

    pub fn hard_big_f_grad(&self, x: &[f64]) -> Vec<f64> {
        let (u, _) = self.reduce(x);
        let y: Vec<f64> = u.iter().map(|t| t.sin()).collect();
        let gh = h_grad(&y, &self.v, self.mu);
        u.iter()
            .zip(&gh)
            .map(|(ui, gi)| self.epsilon * (gi * ui.cos() + (2.0 * ui).sin()))
            .collect()
    }

    pub fn hard_big_f_hess(&self, x: &[f64]) -> DMatrix<f64> {
        let (u, _) = self.reduce(x);
        let y: Vec<f64> = u.iter().map(|t| t.sin()).collect();
        let c: Vec<f64> = u.iter().map(|t| t.cos()).collect();
        let gh = h_grad(&y, &self.v, self.mu);
        let hh = h_hess(&y, &self.v, self.mu);
        let scale = (self.epsilon * self.rho).sqrt();
        let d = self.d;
        DMatrix::from_fn(d, d, |i, j| {
            let mut e = c[i] * hh[(i, j)] * c[j];
            if i == j {
                e += -gh[i] * y[i] + 2.0 * (2.0 * u[i]).cos();
            }
            scale * e
        })
    }

    pub fn hard_big_f_hvp(&self, x: &[f64], e: &[f64]) -> Vec<f64> {
        let (u, _) = self.reduce(x);
        let y: Vec<f64> = u.iter().map(|t| t.sin()).collect();
        let c: Vec<f64> = u.iter().map(|t| t.cos()).collect();
        let gh = h_grad(&y, &self.v, self.mu);
        let ce: Vec<f64> = c.iter().zip(e).map(|(a, b)| a * b).collect();
        let he = h_hess_vec(&y, &self.v, self.mu, &ce);
        let scale = (self.epsilon * self.rho).sqrt();
        (0..self.d)
            .map(|i| scale * (c[i] * he[i] + (-gh[i] * y[i] + 2.0 * (2.0 * u[i]).cos()) * e[i]))
            .collect()
    }

    pub fn truth(&self) -> Arc<dyn TruthView> {
        Arc::new(HardTruth(self.clone()))
    }

    /// Counted oracle for `f~` paired with the truth view of `F~`.
    pub fn oracle(&self) -> Result<FunctionPairOracle> {
        let p = self.clone();
        FunctionPairOracle::new(self.d, move |x| p.hard_f(x))?.with_truth(self.truth(), self.declared_nu())
    }
}

struct HardTruth(HardInstanceParams);

impl TruthView for HardTruth {
    fn dim(&self) -> usize {
        self.0.d
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.0.hard_big_f(x)
    }
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.0.hard_big_f_grad(x))
    }
    fn hessian(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        Some(self.0.hard_big_f_hess(x))
    }
    fn hvp(&self, x: &[f64], v: &[f64]) -> Option<Vec<f64>> {
        Some(self.0.hard_big_f_hvp(x, v))
    }
}

/// Proof constants checked by [`smoothness_audit`].
pub const HESS_NORM_BOUND: f64 = 7.0e6;
pub const HESS_LIPSCHITZ_BOUND: f64 = 2.8e10;
pub const CERT_GRAD: f64 = 1e-3;
pub const CERT_EIG: f64 = -0.3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub check: &'static str,
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
    pub observed: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothnessAudit {
    pub d: usize,
    pub samples: usize,
    pub max_abs_h: f64,
    pub max_grad_h: f64,
    pub max_abs_f_over_bound: f64,
    pub max_hess_norm: f64,
    pub max_hess_lipschitz_ratio: f64,
    pub certificate_points: usize,
    pub certificate_failures: usize,
    pub violations: Vec<Witness>,
}

impl SmoothnessAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// A sampling mix for the scale-free instance: the support of `h` (around
/// the `v` axis), the ball, and the whole fundamental cube.
fn audit_point(v: &[f64], mu: f64, rng: &mut RngStream) -> Vec<f64> {
    let d = v.len();
    match rng.below(4) {
        0 => {
            let a = rng.uniform_range(-1.0, 1.0) / mu;
            let w = rng.uniform_ball(d, 1.0 / mu);
            let (_, w) = split(&w, v);
            v.iter().zip(&w).map(|(vi, wi)| a * vi + wi).collect()
        }
        1 => rng.uniform_ball(d, 1.5 / mu),
        2 => rng.uniform_ball(d, 3.0 / mu),
        _ => rng.uniform_cube(d, PI / 2.0),
    }
}

/// Samples the scale-free instance and checks `|h| <= 1`, `‖grad h‖ <= 3 mu`,
/// `|F| <= 1 + d`, `‖hess F‖ <= 7e6`, the Hessian-Lipschitz ratio against
/// `2.8e10` on nearby pairs, and the no-SOSP certificate at non-informative
/// points.
pub fn smoothness_audit(params: &HardInstanceParams, samples: usize, rng: &mut RngStream) -> SmoothnessAudit {
    let p = params.scale_free();
    let d = p.d;
    let mu = p.mu;
    let v = p.v.clone();
    let mut violations = Vec::new();
    let (mut max_h, mut max_gh, mut max_f, mut max_hn, mut max_lip) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for k in 0..samples {
        let mut r = rng.substream(k as u64);
        let x = audit_point(&v, mu, &mut r);
        let y: Vec<f64> = x.iter().map(|t| t.sin()).collect();
        let hv = h_value(&y, &v, mu).abs();
        let gh = norm(&h_grad(&y, &v, mu));
        let fv = p.hard_big_f(&x).abs();
        let hx = p.hard_big_f_hess(&x);
        let hn = sym_spectral_norm(&hx);
        let step = r.unit_sphere(d);
        let len = 1e-4 / mu * r.uniform_range(0.1, 1.0);
        let x2: Vec<f64> = x.iter().zip(&step).map(|(a, b)| a + len * b).collect();
        let lip = sym_spectral_norm(&(p.hard_big_f_hess(&x2) - &hx)) / dist(&x, &x2);
        max_h = max_h.max(hv);
        max_gh = max_gh.max(gh);
        max_f = max_f.max(fv / (1.0 + d as f64));
        max_hn = max_hn.max(hn);
        max_lip = max_lip.max(lip);
        let mut flag = |check, observed: f64, bound: f64, other: Option<Vec<f64>>| {
            if observed > bound {
                violations.push(Witness {
                    check,
                    x: x.clone(),
                    y: other,
                    observed,
                    bound,
                });
            }
        };
        flag("abs_h", hv, 1.0, None);
        flag("grad_h", gh, 3.0 * mu, None);
        flag("abs_f", fv, 1.0 + d as f64, None);
        flag("hess_norm", hn, HESS_NORM_BOUND, None);
        flag("hess_lipschitz", lip, HESS_LIPSCHITZ_BOUND, Some(x2.clone()));
    }
    let mut cert_failures = 0;
    let truth = p.truth();
    for k in 0..samples {
        let mut r = rng.substream((1 << 40) + k as u64);
        let x = if k % 2 == 0 {
            sample_label(&p, RegionLabel::Band, &mut r)
        } else {
            sample_label(&p, RegionLabel::Padding, &mut r)
        };
        let Some(x) = x else { continue };
        let g = p.hard_big_f_grad(&x);
        let ev = sym_eigenvalues(&truth.hessian(&x).expect("analytic"))[0];
        if !(norm(&g) >= CERT_GRAD || ev <= CERT_EIG) {
            cert_failures += 1;
            violations.push(Witness {
                check: "no_sosp_certificate",
                x,
                y: None,
                observed: norm(&g),
                bound: CERT_GRAD,
            });
        }
    }
    SmoothnessAudit {
        d,
        samples,
        max_abs_h: max_h,
        max_grad_h: max_gh,
        max_abs_f_over_bound: max_f,
        max_hess_norm: max_hn,
        max_hess_lipschitz_ratio: max_lip,
        certificate_points: samples,
        certificate_failures: cert_failures,
        violations,
    }
}

/// Rejection-samples a point of the given region (scaled coordinates).
/// Band and ball points come from the uniform ball; padding points from
/// the cube minus the ball.
pub fn sample_label(params: &HardInstanceParams, label: RegionLabel, rng: &mut RngStream) -> Option<Vec<f64>> {
    let d = params.d;
    let r = params.scale_r();
    for _ in 0..10_000 {
        let x = match label {
            RegionLabel::Padding => rng.uniform_cube(d, PI * r / 2.0),
            _ => rng.uniform_ball(d, params.ball_radius()),
        };
        if params.classify(&x).label == label {
            return Some(x);
        }
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandGapAudit {
    pub d: usize,
    pub band_samples: usize,
    pub outside_samples: usize,
    pub max_gap: f64,
    /// `max_gap / (eps r)`.
    pub max_gap_ratio: f64,
    /// `eps r min(1, 16 mu^2 ln^2 d / d)`.
    pub bound: f64,
    pub band_violations: usize,
    /// Points outside the band where `f~ != F~` bitwise.
    pub outside_mismatches: usize,
}

/// Largest `|f~ - F~|` over band samples and an exact-equality check of
/// `f~ = F~` outside the band.
pub fn band_gap_audit(params: &HardInstanceParams, samples: usize, rng: &mut RngStream) -> BandGapAudit {
    let scale = params.value_scale();
    let d = params.d as f64;
    let bound = scale * (16.0 * params.mu * params.mu * d.ln().powi(2) / d).min(1.0);
    let gaps: Vec<Option<f64>> = (0..samples)
        .into_par_iter()
        .map(|k| {
            let mut r = rng.substream(k as u64);
            sample_label(params, RegionLabel::Band, &mut r).map(|x| (params.hard_f(&x) - params.hard_big_f(&x)).abs())
        })
        .collect();
    let band: Vec<f64> = gaps.into_iter().flatten().collect();
    let max_gap = band.iter().copied().fold(0.0, f64::max);
    let band_violations = band.iter().filter(|g| **g > bound).count();
    let outside: Vec<bool> = (0..samples)
        .into_par_iter()
        .filter_map(|k| {
            let mut r = rng.substream((1 << 41) + k as u64);
            let x = if k % 2 == 0 {
                sample_label(params, RegionLabel::Padding, &mut r)?
            } else {
                r.uniform_ball(params.d, params.ball_radius())
            };
            if params.replaced(params.classify(&x).label) {
                return None;
            }
            Some(params.hard_f(&x).to_bits() != params.hard_big_f(&x).to_bits())
        })
        .collect();
    BandGapAudit {
        d: params.d,
        band_samples: band.len(),
        outside_samples: outside.len(),
        max_gap,
        max_gap_ratio: max_gap / scale,
        bound,
        band_violations,
        outside_mismatches: outside.iter().filter(|m| **m).count(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationReport {
    pub d: usize,
    pub trials: usize,
    /// `2 exp(-(ln d)^2 / 2)`.
    pub bound: f64,
    /// Trials with `|⟨sin(x/r), v⟩| > ln d / sqrt d`.
    pub misses: usize,
    /// Trials with `|⟨x/‖x‖, v⟩| > ln d / sqrt d`.
    pub direction_misses: usize,
    pub miss_fraction: f64,
    pub direction_miss_fraction: f64,
    pub x_norm: f64,
}

/// Fixes `x` uniform in the scale-free ball and draws `trials` hidden
/// directions, counting how often `x` falls outside the band.
pub fn fixed_point_concentration(d: usize, trials: usize, rng: &mut RngStream) -> Result<ConcentrationReport> {
    fixed_point_concentration_at(d, trials, None, rng)
}

pub fn fixed_point_concentration_at(d: usize, trials: usize, x: Option<Vec<f64>>, rng: &mut RngStream) -> Result<ConcentrationReport> {
    if d < 2 {
        return Err(invalid("d", "must be at least 2"));
    }
    if trials == 0 {
        return Err(invalid("trials", "must be positive"));
    }
    let x = match x {
        Some(x) => {
            check_dim(d, x.len())?;
            x
        }
        None => rng.uniform_ball(d, 3.0 / DEFAULT_MU),
    };
    let y: Vec<f64> = x.iter().map(|t| t.sin()).collect();
    let xn = norm(&x);
    let thr = (d as f64).ln() / (d as f64).sqrt();
    let chunk = 4096;
    let counts: Vec<(usize, usize)> = (0..trials.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut r = rng.substream(c as u64);
            let n = chunk.min(trials - c * chunk);
            let (mut m, mut md) = (0, 0);
            for _ in 0..n {
                let v = r.unit_sphere(d);
                if dot(&y, &v).abs() > thr {
                    m += 1;
                }
                if xn > 0.0 && (dot(&x, &v) / xn).abs() > thr {
                    md += 1;
                }
            }
            (m, md)
        })
        .collect();
    let misses = counts.iter().map(|c| c.0).sum();
    let direction_misses = counts.iter().map(|c| c.1).sum();
    Ok(ConcentrationReport {
        d,
        trials,
        bound: 2.0 * (-(d as f64).ln().powi(2) / 2.0).exp(),
        misses,
        direction_misses,
        miss_fraction: misses as f64 / trials as f64,
        direction_miss_fraction: direction_misses as f64 / trials as f64,
        x_norm: xn,
    })
}

/// Wraps an oracle and tallies how many queried points were informative.
pub struct RecordingOracle<'a> {
    inner: &'a FunctionPairOracle,
    params: &'a HardInstanceParams,
    informative: std::sync::atomic::AtomicU64,
}

impl<'a> RecordingOracle<'a> {
    pub fn new(inner: &'a FunctionPairOracle, params: &'a HardInstanceParams) -> Self {
        Self {
            inner,
            params,
            informative: std::sync::atomic::AtomicU64::new(0),
        }
    }

    pub fn informative_queries(&self) -> u64 {
        self.informative.load(std::sync::atomic::Ordering::SeqCst)
    }
}

impl Oracle for RecordingOracle<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        if !self.params.non_informative(x) {
            self.informative.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        self.inner.value(x)
    }

    fn queries(&self) -> u64 {
        self.inner.queries()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdaptiveReport {
    pub d: usize,
    pub queries: u64,
    pub informative_queries: u64,
    pub non_informative_fraction: f64,
    pub final_point: Vec<f64>,
    pub final_label: RegionLabel,
    pub report: StationarityReport,
}

/// Runs `optimizer` against `f~` through the query interface only and
/// checks the point it returns against `F~`.
pub fn adaptive_query_experiment<Opt>(params: &HardInstanceParams, optimizer: Opt) -> Result<AdaptiveReport>
where
    Opt: FnOnce(&dyn Oracle) -> Result<Vec<f64>>,
{
    let oracle = params.oracle()?;
    let rec = RecordingOracle::new(&oracle, params);
    let x = optimizer(&rec)?;
    check_dim(params.d, x.len())?;
    let queries = rec.queries();
    let informative = rec.informative_queries();
    let report = check_sosp(params.truth().as_ref(), &x, params.epsilon, params.rho)?;
    Ok(AdaptiveReport {
        d: params.d,
        queries,
        informative_queries: informative,
        non_informative_fraction: if queries == 0 {
            1.0
        } else {
            1.0 - informative as f64 / queries as f64
        },
        final_label: params.classify(&x).label,
        final_point: x,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlReport {
    pub start: Vec<f64>,
    pub start_report: StationarityReport,
    pub final_point: Vec<f64>,
    pub final_label: RegionLabel,
    pub report: StationarityReport,
    /// Component of the final point along `v`, in units of `r / mu`.
    pub along_v: f64,
}

/// Control arm that knows `v`: gradient descent on `F~` started a short
/// way along `v` from the saddle at the origin.
pub fn cheating_control(params: &HardInstanceParams, iters: usize) -> Result<ControlReport> {
    let r = params.scale_r();
    let unit = r / params.mu;
    let start: Vec<f64> = params.v.iter().map(|vi| 0.2 * unit * vi).collect();
    let truth = params.truth();
    let eta = 1.0 / ((params.epsilon * params.rho).sqrt() * 40.0 * params.mu * params.mu);
    let mut x = start.clone();
    for _ in 0..iters {
        let g = params.hard_big_f_grad(&x);
        x.iter_mut().zip(&g).for_each(|(xi, gi)| *xi -= eta * gi);
    }
    Ok(ControlReport {
        start_report: check_sosp(truth.as_ref(), &vec![0.0; params.d], params.epsilon, params.rho)?,
        start,
        final_label: params.classify(&x).label,
        report: check_sosp(truth.as_ref(), &x, params.epsilon, params.rho)?,
        along_v: dot(&x, &params.v) / unit,
        final_point: x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stationarity::{finite_diff_grad, finite_diff_hessian_from_grad};

    fn inst(d: usize, seed: u64) -> HardInstanceParams {
        HardInstanceParams::new(d, 1.0, 1.0, DEFAULT_MU, Variant::PolynomialQuery, &mut RngStream::new(seed, 0)).unwrap()
    }

    #[test]
    fn scalar_polynomials() {
        assert_eq!(g1(0.0), 0.0);
        assert_eq!(g2(0.0), -1.0);
        assert_eq!(g1(1.0), 0.0);
        assert_eq!(g2(1.0), 0.0);
        assert!((g1(0.5) - 0.5).abs() < 1e-15);
        assert!((g2(0.5) + 0.3125).abs() < 1e-15);
        assert_eq!(g1(-0.3), g1(0.3));
        assert_eq!(g2(-0.7), g2(0.7));
    }

    #[test]
    fn derivatives_match_differences() {
        for &t in &[-0.9, -0.55, -0.2, 0.1, 0.4, 0.73] {
            let h = 1e-6;
            assert!((g1_prime(t) - (g1(t + h) - g1(t - h)) / (2.0 * h)).abs() < 1e-7);
            assert!((g2_prime(t) - (g2(t + h) - g2(t - h)) / (2.0 * h)).abs() < 1e-7);
            assert!((g1_second(t) - (g1_prime(t + h) - g1_prime(t - h)) / (2.0 * h)).abs() < 1e-6);
            assert!((g2_second(t) - (g2_prime(t + h) - g2_prime(t - h)) / (2.0 * h)).abs() < 1e-6);
        }
        for f in [g1_prime, g2_prime, g1_second, g2_second] {
            assert!(f(1.0 - 1e-12).abs() < 1e-9);
        }
    }

    #[test]
    fn h_examples() {
        let v = [1.0, 0.0];
        assert_eq!(h_value(&[0.0, 0.0], &v, 300.0), 0.0);
        assert!((h_value(&[1.0 / 600.0, 0.0], &v, 300.0) + 0.5).abs() < 1e-12);
        assert_eq!(h_value(&[1.0 / 300.0, 0.0], &v, 300.0), 0.0);
    }

    #[test]
    fn origin_values() {
        let p = inst(4, 1);
        assert_eq!(p.hard_big_f(&[0.0; 4]), 0.0);
        assert_eq!(p.hard_f(&[0.0; 4]), 0.0);
        assert_eq!(p.classify(&[0.0; 4]).label, RegionLabel::Band);
        assert!(p.classify(&[0.0; 4]).label.in_ball());
    }

    #[test]
    fn classify_examples() {
        let p = inst(4, 2);
        let x = [0.02, 0.0, 0.0, 0.0];
        assert_eq!(p.classify(&x).label, RegionLabel::Padding);
        let q = HardInstanceParams::with_direction(1.0, 1.0, 300.0, Variant::PolynomialQuery, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(q.classify(&[0.001, 0.0, 0.0, 0.0]).label, RegionLabel::Band);
        assert!(q.classify(&[0.001 + PI, 0.0, 0.0, 0.0]).reduced);
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let p = inst(3, 5);
        let mut r = RngStream::new(11, 0);
        for _ in 0..50 {
            let x = r.uniform_ball(3, 1.5 / p.mu);
            let g = p.hard_big_f_grad(&x);
            let fd = finite_diff_grad(&|z| p.hard_big_f(z), &x, 1e-7 / p.mu);
            let scale = norm(&g).max(1.0);
            assert!(dist(&g, &fd) / scale < 1e-5, "{g:?} vs {fd:?}");
            let h = p.hard_big_f_hess(&x);
            let hfd = finite_diff_hessian_from_grad(&|z| p.hard_big_f_grad(z), &x, 1e-7 / p.mu);
            let hs = sym_spectral_norm(&h).max(1.0);
            assert!(sym_spectral_norm(&(&h - &hfd)) / hs < 1e-5);
            let e = r.unit_sphere(3);
            let hv = p.hard_big_f_hvp(&x, &e);
            let dense = &h * nalgebra::DVector::from_column_slice(&e);
            assert!(dist(&hv, dense.as_slice()) < 1e-6 * hs);
        }
    }

    #[test]
    fn periodic_and_v_independent() {
        let p = HardInstanceParams::new(5, 0.5, 2.0, DEFAULT_MU, Variant::PolynomialQuery, &mut RngStream::new(3, 0)).unwrap();
        let other = p.with_other_direction(RngStream::new(4, 0).unit_sphere(5)).unwrap();
        let mut r = RngStream::new(12, 0);
        let step = PI * p.scale_r();
        for _ in 0..200 {
            let x = r.uniform_ball(5, 2.0 * p.ball_radius());
            for i in 0..5 {
                let mut y = x.clone();
                y[i] += step;
                assert!((p.hard_big_f(&x) - p.hard_big_f(&y)).abs() <= 1e-12 * p.value_scale());
            }
            if p.non_informative(&x) && other.non_informative(&x) {
                assert_eq!(p.hard_f(&x), other.hard_f(&x));
            }
        }
    }

    #[test]
    fn escape_saddle_with_knowledge_of_v() {
        let p = inst(6, 8);
        let c = cheating_control(&p, 2000).unwrap();
        assert!(!c.start_report.verdict);
        assert!(c.report.verdict, "{:?}", c.report);
        assert!((c.along_v - 0.4).abs() < 0.05, "{}", c.along_v);
    }

    #[test]
    fn rejects_bad_direction() {
        assert!(HardInstanceParams::with_direction(1.0, 1.0, 300.0, Variant::PolynomialQuery, vec![1.0, 1.0]).is_err());
        assert!(HardInstanceParams::with_direction(1.0, 1.0, 2.0, Variant::PolynomialQuery, vec![1.0, 0.0]).is_err());
    }
}
