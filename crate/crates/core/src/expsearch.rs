//! Exponential-time certifier: grid covers plus a local quadratic-model
//! feasibility test, usable for `d <= 3`.
//!
//! Each candidate `x` is probed at `y = x + r z` over a sphere cover. The
//! default mode fits `(g, H)` by least squares and checks every probe
//! constraint; the literal mode enumerates `(g, H)` over covers instead and
//! is only sensible for `d = 1`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{norm, sym_min_eig};
use crate::oracle::Oracle;

pub const DEFAULT_COVER_CAP: usize = 10_000_000;
pub const DEFAULT_KAPPA: f64 = 6.0;
pub const DEFAULT_SPHERE_RESOLUTION: f64 = 0.1;
pub const MAX_SEARCH_DIM: usize = 3;
/// Largest ratio of singular values accepted for the probe design.
const MAX_CONDITION: f64 = 1e8;
const CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Euclidean,
    SupEntrywise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoverObject {
    Ball,
    Sphere,
    MatrixBall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverSpec {
    pub radius: f64,
    pub resolution: f64,
    pub metric: Metric,
    pub object: CoverObject,
}

impl CoverSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) || !self.resolution.is_finite() {
            return Err(invalid("resolution", format!("must be positive, got {}", self.resolution)));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(invalid("radius", format!("must be positive, got {}", self.radius)));
        }
        Ok(())
    }
}

/// Axis-aligned grid `{ j * spacing : |j| <= half }^dim`, enumerated in
/// lexicographic order without materializing it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub spacing: f64,
    pub half: i64,
}

impl Grid {
    fn new(dim: usize, spacing: f64, half: i64, cap: usize) -> Result<Self> {
        let size = ((2 * half + 1) as f64).powi(dim as i32);
        if size > cap as f64 {
            return Err(Error::CoverTooLarge { size, cap });
        }
        Ok(Self { dim, spacing, half })
    }

    pub fn len(&self) -> usize {
        ((2 * self.half + 1) as usize).pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, mut index: usize) -> Vec<f64> {
        let side = (2 * self.half + 1) as usize;
        let mut p = vec![0.0; self.dim];
        for k in (0..self.dim).rev() {
            let j = (index % side) as i64 - self.half;
            p[k] = j as f64 * self.spacing;
            index /= side;
        }
        p
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive, got {v}")))
    }
}

/// Grid with spacing `eps_c / sqrt(d)` covering the radius-`r` ball.
pub fn ball_grid(d: usize, radius: f64, eps_c: f64, cap: usize) -> Result<Grid> {
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    check_positive("radius", radius)?;
    check_positive("eps_c", eps_c)?;
    let sd = (d as f64).sqrt();
    let half = (radius * sd / eps_c + 1.0).floor();
    if half > 1e9 {
        return Err(Error::CoverTooLarge { size: f64::INFINITY, cap });
    }
    Grid::new(d, eps_c / sd, half as i64, cap)
}

pub fn ball_cover(d: usize, radius: f64, eps_c: f64) -> Result<Vec<Vec<f64>>> {
    Ok(ball_grid(d, radius, eps_c, DEFAULT_COVER_CAP)?.points())
}

/// Entrywise grid of `d x d` matrices with spacing `eps_c / d` and entries
/// up to `ell` in magnitude; its spectral covering radius is below `eps_c`.
pub fn matrix_grid(d: usize, ell: f64, eps_c: f64, cap: usize) -> Result<Grid> {
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    check_positive("ell", ell)?;
    check_positive("eps_c", eps_c)?;
    let df = d as f64;
    let half = (ell * df / eps_c + 1.0).floor();
    if half > 1e9 {
        return Err(Error::CoverTooLarge { size: f64::INFINITY, cap });
    }
    Grid::new(d * d, eps_c / df, half as i64, cap)
}

pub fn matrix_cover(d: usize, ell: f64, eps_c: f64) -> Result<Vec<DMatrix<f64>>> {
    let g = matrix_grid(d, ell, eps_c, DEFAULT_COVER_CAP)?;
    Ok((0..g.len())
        .map(|i| DMatrix::from_row_slice(d, d, &g.point(i)))
        .collect())
}

/// Cover of the unit sphere with covering radius `eps_prime`: grids on the
/// faces of `[-1, 1]^d` projected radially (the projection is 1-Lipschitz
/// outside the unit ball).
pub fn sphere_cover(d: usize, eps_prime: f64) -> Result<Vec<Vec<f64>>> {
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    check_positive("eps_prime", eps_prime)?;
    if d == 1 {
        return Ok(vec![vec![-1.0], vec![1.0]]);
    }
    let face_dim = d - 1;
    let step = 2.0 * eps_prime / (face_dim as f64).sqrt();
    let k = (2.0 / step).ceil() as usize;
    let ticks: Vec<f64> = (0..=k).map(|i| -1.0 + 2.0 * i as f64 / k as f64).collect();
    let per_face = (k + 1).pow(face_dim as u32);
    if per_face.saturating_mul(2 * d) > DEFAULT_COVER_CAP {
        return Err(Error::CoverTooLarge {
            size: (per_face * 2 * d) as f64,
            cap: DEFAULT_COVER_CAP,
        });
    }
    let mut out = Vec::new();
    for axis in 0..d {
        for sign in [-1.0, 1.0] {
            for idx in 0..per_face {
                let mut rest = idx;
                let mut p = vec![0.0; d];
                let mut dup = false;
                for j in (0..d).rev() {
                    if j == axis {
                        p[j] = sign;
                        continue;
                    }
                    p[j] = ticks[rest % (k + 1)];
                    rest /= k + 1;
                    // points on shared edges belong to the lowest axis face
                    if j < axis && p[j].abs() == 1.0 {
                        dup = true;
                    }
                }
                if !dup {
                    let n = norm(&p);
                    out.push(p.iter().map(|v| v / n).collect());
                }
            }
        }
    }
    Ok(out)
}

/// Precomputed least-squares design for probes at radius `r`.
///
/// Unknowns are `(r g, r^2 vech(H))`; the row for `z` holds `z` followed by
/// `z_a^2 / 2` for diagonal and `z_a z_b` for off-diagonal entries.
#[derive(Debug, Clone)]
pub struct ProbeDesign {
    pub dim: usize,
    pub radius: f64,
    pub directions: Vec<Vec<f64>>,
    pinv: DMatrix<f64>,
    pub sigma_min: f64,
    pub condition: f64,
    /// Norm of `g`-block and Frobenius norm of `H`-block of `A^+ e` over
    /// `‖e‖_inf <= 1`, bounded through absolute row sums of `A^+`.
    grad_gain: f64,
    hess_gain: f64,
}

fn pairs(d: usize) -> Vec<(usize, usize)> {
    let mut v: Vec<(usize, usize)> = (0..d).map(|a| (a, a)).collect();
    for a in 0..d {
        for b in a + 1..d {
            v.push((a, b));
        }
    }
    v
}

impl ProbeDesign {
    pub fn new(d: usize, directions: Vec<Vec<f64>>, radius: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::ZeroDimension);
        }
        check_positive("r_probe", radius)?;
        for z in &directions {
            crate::error::check_dim(d, z.len())?;
        }
        let pr = pairs(d);
        let cols = d + pr.len();
        let n = directions.len();
        if n < cols {
            return Err(Error::IllConditioned { condition: f64::INFINITY });
        }
        let mut a = DMatrix::zeros(n, cols);
        for (i, z) in directions.iter().enumerate() {
            for k in 0..d {
                a[(i, k)] = z[k];
            }
            for (c, &(p, q)) in pr.iter().enumerate() {
                a[(i, d + c)] = if p == q { 0.5 * z[p] * z[p] } else { z[p] * z[q] };
            }
        }
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::IllConditioned { condition });
        }
        let pinv = svd
            .pseudo_inverse(0.0)
            .map_err(|e| invalid("probe design", e.to_string()))?;
        let row_l1: Vec<f64> = (0..cols).map(|k| pinv.row(k).iter().map(|v| v.abs()).sum()).collect();
        let grad_gain = row_l1[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
        let hess_gain = pr
            .iter()
            .zip(&row_l1[d..])
            .map(|(&(p, q), v)| if p == q { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt();
        Ok(Self {
            dim: d,
            radius,
            directions,
            pinv,
            grad_gain,
            hess_gain,
            sigma_min: smin,
            condition,
        })
    }

    pub fn queries_per_probe(&self) -> usize {
        self.directions.len() + 1
    }

    fn unpack(&self, theta: &DVector<f64>) -> (Vec<f64>, DMatrix<f64>) {
        let d = self.dim;
        let r = self.radius;
        let g = (0..d).map(|k| theta[k] / r).collect();
        let mut h = DMatrix::zeros(d, d);
        for (c, &(p, q)) in pairs(d).iter().enumerate() {
            let v = theta[d + c] / (r * r);
            h[(p, q)] = v;
            h[(q, p)] = v;
        }
        (g, h)
    }

    /// Largest `|f(x) + g.(y-x) + (y-x)^T H (y-x)/2 - f(y)|` over the probes.
    pub fn max_violation(&self, fx: f64, fy: &[f64], g: &[f64], h: &DMatrix<f64>) -> f64 {
        let r = self.radius;
        self.directions
            .iter()
            .zip(fy)
            .map(|(z, &f)| {
                let s: Vec<f64> = z.iter().map(|v| v * r).collect();
                let hs = h * DVector::from_column_slice(&s);
                let lin: f64 = g.iter().zip(&s).map(|(a, b)| a * b).sum();
                let quad: f64 = hs.iter().zip(&s).map(|(a, b)| a * b).sum();
                (fx + lin + 0.5 * quad - f).abs()
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeParams {
    pub nu: f64,
    pub rho: f64,
    pub kappa: f64,
}

impl ProbeParams {
    pub fn new(nu: f64, rho: f64) -> Self {
        Self {
            nu,
            rho,
            kappa: DEFAULT_KAPPA,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.nu >= 0.0) || !self.nu.is_finite() {
            return Err(invalid("nu", format!("must be nonnegative, got {}", self.nu)));
        }
        check_positive("rho", self.rho)?;
        check_positive("kappa", self.kappa)
    }

    /// Acceptance tolerance `kappa (rho r^3 + nu)`.
    pub fn tolerance(&self, r: f64) -> f64 {
        self.kappa * (self.rho * r.powi(3) + self.nu)
    }
}

/// A feasible quadratic model at `x` with certified distances to the true
/// gradient and Hessian, valid when `nu` and `rho` are declared correctly.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeFit {
    pub g: Vec<f64>,
    #[serde(skip)]
    pub h: DMatrix<f64>,
    pub h_min_eig: f64,
    pub max_violation: f64,
    pub tolerance: f64,
    /// Upper bound on `‖g - grad F(x)‖`.
    pub grad_err: f64,
    /// Upper bound on `‖H - hess F(x)‖` (spectral).
    pub hess_err: f64,
    /// `nu > rho r^3`: the model may fit while telling nothing about `F`.
    pub outside_regime: bool,
}

fn fit_from_values(design: &ProbeDesign, params: &ProbeParams, fx: f64, fy: &[f64]) -> Option<ProbeFit> {
    let rhs = DVector::from_iterator(fy.len(), fy.iter().map(|f| f - fx));
    let theta = &design.pinv * &rhs;
    let (g, h) = design.unpack(&theta);
    let viol = design.max_violation(fx, fy, &g, &h);
    let r = design.radius;
    let tol = params.tolerance(r);
    if !(viol <= tol) {
        return None;
    }
    // The observed differences are A theta* + e with theta* from (grad F,
    // hess F) and |e_i| <= rho r^3/6 + 2 nu, so the fit is off by A^+ e.
    let truth_slack = params.rho * r.powi(3) / 6.0 + 2.0 * params.nu;
    let h_min_eig = sym_min_eig(&h);
    Some(ProbeFit {
        g,
        h,
        h_min_eig,
        max_violation: viol,
        tolerance: tol,
        grad_err: design.grad_gain * truth_slack / r,
        hess_err: design.hess_gain * truth_slack / (r * r),
        outside_regime: params.nu > params.rho * r.powi(3),
    })
}

fn probe_points(design: &ProbeDesign, x: &[f64]) -> Vec<Vec<f64>> {
    let r = design.radius;
    design
        .directions
        .iter()
        .map(|z| x.iter().zip(z).map(|(a, b)| a + r * b).collect())
        .collect()
}

/// Probes `f` around `x` and returns a feasible `(g, H)` if one exists.
pub fn probe_with<O: Oracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    design: &ProbeDesign,
    params: &ProbeParams,
) -> Result<Option<ProbeFit>> {
    params.validate()?;
    crate::error::check_dim(oracle.dim(), x.len())?;
    crate::error::check_dim(design.dim, x.len())?;
    let fx = oracle.value(x);
    let fy: Vec<f64> = probe_points(design, x).iter().map(|y| oracle.value(y)).collect();
    Ok(fit_from_values(design, params, fx, &fy))
}

/// One feasibility probe with the default `kappa`.
pub fn feasibility_probe<O: Oracle + ?Sized>(
    oracle: &O,
    x: &[f64],
    r_probe: f64,
    sphere: &[Vec<f64>],
    nu: f64,
    rho: f64,
) -> Result<Option<ProbeFit>> {
    let design = ProbeDesign::new(x.len(), sphere.to_vec(), r_probe)?;
    probe_with(oracle, x, &design, &ProbeParams::new(nu, rho))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Acceptance {
    /// `‖g‖ + grad_err <= 2 eps` and `lambda_min(H) - hess_err >= -sqrt(2 rho eps)`:
    /// every accepted point is a `2 eps`-SOSP of `F` under correct declarations.
    Certified,
    /// `‖g‖ <= 2 eps` and `lambda_min(H) >= -2 sqrt(rho eps)` on the model alone.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub eps: f64,
    pub ell: f64,
    pub rho: f64,
    pub bound_b: f64,
    pub nu: f64,
    /// Search radius; `B / eps` when unset.
    #[serde(default)]
    pub radius: Option<f64>,
    /// Ball-cover resolution; `eps / ell` when unset.
    #[serde(default)]
    pub resolution: Option<f64>,
    /// Probe radius `c' sqrt(eps / rho)`; when unset, `c'` minimizes the
    /// Hessian error bar `rho r / 6 + 2 nu / r^2`, clamped to `[0.5, 2]`.
    #[serde(default)]
    pub probe_c: Option<f64>,
    pub kappa: f64,
    pub sphere_resolution: f64,
    pub acceptance: Acceptance,
    /// Enumerate `(g, H)` over covers instead of least squares.
    pub pure_enumeration: bool,
    pub cover_cap: usize,
}

impl SearchConfig {
    pub fn new(eps: f64, ell: f64, rho: f64, bound_b: f64, nu: f64) -> Self {
        Self {
            eps,
            ell,
            rho,
            bound_b,
            nu,
            radius: None,
            resolution: None,
            probe_c: None,
            kappa: DEFAULT_KAPPA,
            sphere_resolution: DEFAULT_SPHERE_RESOLUTION,
            acceptance: Acceptance::Certified,
            pure_enumeration: false,
            cover_cap: DEFAULT_COVER_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_positive("eps", self.eps)?;
        check_positive("ell", self.ell)?;
        check_positive("rho", self.rho)?;
        check_positive("bound_b", self.bound_b)?;
        if let Some(c) = self.probe_c {
            check_positive("probe_c", c)?;
        }
        check_positive("kappa", self.kappa)?;
        check_positive("sphere_resolution", self.sphere_resolution)?;
        if !(self.nu >= 0.0) || !self.nu.is_finite() {
            return Err(invalid("nu", format!("must be nonnegative, got {}", self.nu)));
        }
        if let Some(r) = self.radius {
            check_positive("radius", r)?;
        }
        if let Some(r) = self.resolution {
            check_positive("resolution", r)?;
        }
        Ok(())
    }

    pub fn search_radius(&self) -> f64 {
        self.radius.unwrap_or(self.bound_b / self.eps)
    }

    pub fn cover_resolution(&self) -> f64 {
        self.resolution.unwrap_or(self.eps / self.ell)
    }

    pub fn probe_radius(&self) -> f64 {
        let unit = (self.eps / self.rho).sqrt();
        let c = self.probe_c.unwrap_or_else(|| {
            let best = (24.0 * self.nu / self.rho).cbrt() / unit;
            best.clamp(0.5, 2.0)
        });
        c * unit
    }

    fn accepts(&self, fit: &ProbeFit) -> bool {
        let gn = norm(&fit.g);
        match self.acceptance {
            Acceptance::Certified => {
                gn + fit.grad_err <= 2.0 * self.eps
                    && fit.h_min_eig - fit.hess_err >= -(2.0 * self.rho * self.eps).sqrt()
            }
            Acceptance::Literal => gn <= 2.0 * self.eps && fit.h_min_eig >= -2.0 * (self.rho * self.eps).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub point: Vec<f64>,
    /// Position of `point` in the lexicographic cover order.
    pub index: usize,
    pub cover_size: usize,
    pub radius: f64,
    pub resolution: f64,
    pub probe_radius: f64,
    pub sphere_size: usize,
    pub queries: u64,
    pub pure_enumeration: bool,
    pub fit: ProbeFit,
}

/// Scans the ball cover in order and returns the first accepted point.
pub fn exhaustive_sosp_search<O: Oracle + ?Sized>(oracle: &O, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate()?;
    let d = oracle.dim();
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    if d > MAX_SEARCH_DIM {
        return Err(invalid("d", format!("exhaustive search is limited to d <= {MAX_SEARCH_DIM}, got {d}")));
    }
    let grid = ball_grid(d, cfg.search_radius(), cfg.cover_resolution(), cfg.cover_cap)?;
    let design = ProbeDesign::new(d, sphere_cover(d, cfg.sphere_resolution)?, cfg.probe_radius())?;
    let params = ProbeParams {
        nu: cfg.nu,
        rho: cfg.rho,
        kappa: cfg.kappa,
    };
    let enumeration = if cfg.pure_enumeration {
        Some(ModelCovers::new(d, cfg)?)
    } else {
        None
    };
    let before = oracle.queries();
    let radius2 = cfg.search_radius().powi(2);
    let mut start = 0;
    while start < grid.len() {
        let end = (start + CHUNK).min(grid.len());
        let hit = (start..end)
            .into_par_iter()
            .filter_map(|i| {
                let x = grid.point(i);
                if x.iter().map(|v| v * v).sum::<f64>() > radius2 * 1.0000001 + cfg.cover_resolution().powi(2) {
                    return None;
                }
                let fx = oracle.value(&x);
                let fy = oracle.values(&probe_points(&design, &x));
                let fit = match &enumeration {
                    Some(m) => m.search(&design, &params, cfg, fx, &fy),
                    None => fit_from_values(&design, &params, fx, &fy).filter(|f| cfg.accepts(f)),
                };
                fit.map(|f| (i, x, f))
            })
            .min_by_key(|(i, _, _)| *i);
        if let Some((index, point, fit)) = hit {
            return Ok(SearchResult {
                point,
                index,
                cover_size: grid.len(),
                radius: cfg.search_radius(),
                resolution: cfg.cover_resolution(),
                probe_radius: design.radius,
                sphere_size: design.directions.len(),
                queries: oracle.queries() - before,
                pure_enumeration: cfg.pure_enumeration,
                fit,
            });
        }
        start = end;
    }
    Err(Error::SearchExhausted { points: grid.len() })
}

/// Covers of candidate gradients (radius `2 eps`) and symmetric Hessians
/// (entries up to `ell`) for the literal enumeration mode.
struct ModelCovers {
    grads: Vec<Vec<f64>>,
    hessians: Vec<(DMatrix<f64>, f64)>,
}

impl ModelCovers {
    fn new(d: usize, cfg: &SearchConfig) -> Result<Self> {
        let res = cfg.cover_resolution();
        let grads: Vec<Vec<f64>> = ball_grid(d, 2.0 * cfg.eps, res, cfg.cover_cap)?
            .points()
            .into_iter()
            .filter(|g| norm(g) <= 2.0 * cfg.eps)
            .collect();
        let mg = matrix_grid(d, cfg.ell, res, cfg.cover_cap)?;
        let hessians = (0..mg.len())
            .map(|i| DMatrix::from_row_slice(d, d, &mg.point(i)))
            .filter(|h| h == &h.transpose())
            .map(|h| {
                let e = sym_min_eig(&h);
                (h, e)
            })
            .collect();
        Ok(Self { grads, hessians })
    }

    fn search(
        &self,
        design: &ProbeDesign,
        params: &ProbeParams,
        cfg: &SearchConfig,
        fx: f64,
        fy: &[f64],
    ) -> Option<ProbeFit> {
        let tol = params.tolerance(design.radius);
        let floor = -2.0 * (cfg.rho * cfg.eps).sqrt();
        for g in &self.grads {
            for (h, e) in &self.hessians {
                if *e < floor {
                    continue;
                }
                let viol = design.max_violation(fx, fy, g, h);
                if viol <= tol {
                    return Some(ProbeFit {
                        g: g.clone(),
                        h: h.clone(),
                        h_min_eig: *e,
                        max_violation: viol,
                        tolerance: tol,
                        grad_err: f64::NAN,
                        hess_err: f64::NAN,
                        outside_regime: params.nu > params.rho * design.radius.powi(3),
                    });
                }
            }
        }
        None
    }
}
