//! Second-order stationarity checks against the hidden function.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, is_finite, norm, sym_eigenvalues, symmetrize};
use crate::oracle::TruthView;
use crate::rng::RngStream;

/// Dimensions above this use the matrix-free eigenvalue iteration.
pub const DENSE_EIG_MAX_DIM: usize = 64;

const LANCZOS_CAP: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Analytic,
    FiniteDifference,
    MatrixFree,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    pub grad_norm: f64,
    pub min_eig: f64,
    pub eps: f64,
    pub rho: f64,
    pub eig_tol: f64,
    pub verdict: bool,
    pub method: Method,
}

impl StationarityReport {
    pub fn from_parts(grad_norm: f64, min_eig: f64, spectral: f64, eps: f64, rho: f64, method: Method) -> Self {
        let eig_tol = 1e-6 * spectral.max(1.0);
        Self {
            grad_norm,
            min_eig,
            eps,
            rho,
            eig_tol,
            verdict: sosp_verdict(grad_norm, min_eig, eps, rho, eig_tol),
            method,
        }
    }

    /// Re-evaluates the verdict at other tolerances.
    pub fn holds_at(&self, eps: f64, rho: f64) -> bool {
        sosp_verdict(self.grad_norm, self.min_eig, eps, rho, self.eig_tol)
    }
}

pub fn sosp_verdict(grad_norm: f64, min_eig: f64, eps: f64, rho: f64, eig_tol: f64) -> bool {
    grad_norm <= eps && min_eig >= -(rho * eps).sqrt() - eig_tol
}

fn fd_step(x: &[f64]) -> f64 {
    1e-5_f64.max(1e-5 * norm(x))
}

/// Central-difference gradient of `f` at `x`.
pub fn finite_diff_grad(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Hessian by central differences of a gradient field, symmetrized.
pub fn finite_diff_hessian_from_grad(g: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> DMatrix<f64> {
    let d = x.len();
    let mut m = DMatrix::zeros(d, d);
    let mut p = x.to_vec();
    for j in 0..d {
        p[j] = x[j] + h;
        let up = g(&p);
        p[j] = x[j] - h;
        let down = g(&p);
        p[j] = x[j];
        for i in 0..d {
            m[(i, j)] = (up[i] - down[i]) / (2.0 * h);
        }
    }
    symmetrize(&m)
}

/// Hessian by second differences of values.
pub fn finite_diff_hessian(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> DMatrix<f64> {
    let d = x.len();
    let f0 = f(x);
    let mut m = DMatrix::zeros(d, d);
    let mut p = x.to_vec();
    for i in 0..d {
        p[i] = x[i] + h;
        let a = f(&p);
        p[i] = x[i] - h;
        let b = f(&p);
        p[i] = x[i];
        m[(i, i)] = (a - 2.0 * f0 + b) / (h * h);
        for j in 0..i {
            let mut q = x.to_vec();
            let mut e = |si: f64, sj: f64| {
                q[i] = x[i] + si * h;
                q[j] = x[j] + sj * h;
                f(&q)
            };
            let v = (e(1.0, 1.0) - e(1.0, -1.0) - e(-1.0, 1.0) + e(-1.0, -1.0)) / (4.0 * h * h);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// `grad F(x)`: analytic when the view provides it, else central differences.
pub fn truth_gradient(truth: &dyn TruthView, x: &[f64]) -> Result<Vec<f64>> {
    let g = match truth.gradient(x) {
        Some(g) => g,
        None => finite_diff_grad(&|p| truth.value(p), x, fd_step(x)),
    };
    if is_finite(&g) {
        Ok(g)
    } else {
        Err(Error::NonFiniteDerivative)
    }
}

/// `hess F(x)`: analytic, else differences of the analytic gradient, else
/// second differences of values.
pub fn truth_hessian(truth: &dyn TruthView, x: &[f64]) -> Result<DMatrix<f64>> {
    truth_hessian_with_method(truth, x).map(|(h, _)| h)
}

fn truth_hessian_with_method(truth: &dyn TruthView, x: &[f64]) -> Result<(DMatrix<f64>, Method)> {
    let (h, method) = if let Some(h) = truth.hessian(x) {
        (symmetrize(&h), Method::Analytic)
    } else if truth.gradient(x).is_some() {
        let g = |p: &[f64]| truth.gradient(p).unwrap_or_default();
        (finite_diff_hessian_from_grad(&g, x, fd_step(x)), Method::FiniteDifference)
    } else {
        let step = 1e-4_f64.max(1e-4 * norm(x));
        (finite_diff_hessian(&|p| truth.value(p), x, step), Method::FiniteDifference)
    };
    if h.iter().all(|v| v.is_finite()) {
        Ok((h, method))
    } else {
        Err(Error::NonFiniteDerivative)
    }
}

/// Checks `‖grad F(x)‖ <= eps` and `lambda_min(hess F(x)) >= -sqrt(rho eps)`.
pub fn check_sosp(truth: &dyn TruthView, x: &[f64], eps: f64, rho: f64) -> Result<StationarityReport> {
    if !(eps > 0.0) || !(rho > 0.0) {
        return Err(invalid("eps/rho", format!("must be positive, got eps={eps}, rho={rho}")));
    }
    crate::error::check_dim(truth.dim(), x.len())?;
    let g = truth_gradient(truth, x)?;
    let gn = norm(&g);
    let d = x.len();
    if d <= DENSE_EIG_MAX_DIM {
        let (h, method) = truth_hessian_with_method(truth, x)?;
        let ev = sym_eigenvalues(&h);
        let spectral = ev[0].abs().max(ev[d - 1].abs());
        return Ok(StationarityReport::from_parts(gn, ev[0], spectral, eps, rho, method));
    }
    let h = fd_step(x);
    let hvp = |v: &[f64]| -> Vec<f64> {
        if let Some(hv) = truth.hvp(x, v) {
            return hv;
        }
        let xp: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
        let xm: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
        let gp = truth_gradient(truth, &xp).unwrap_or_else(|_| vec![f64::NAN; d]);
        let gm = truth_gradient(truth, &xm).unwrap_or_else(|_| vec![f64::NAN; d]);
        gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect()
    };
    let (min_eig, spectral) = lanczos_extremes(&hvp, d, 1e-8)?;
    if !min_eig.is_finite() {
        return Err(Error::NonFiniteDerivative);
    }
    Ok(StationarityReport::from_parts(gn, min_eig, spectral, eps, rho, Method::MatrixFree))
}

/// Smallest eigenvalue of a symmetric operator given only products `H v`.
///
/// Lanczos with full reorthogonalization from a fixed start vector; stops
/// once the Ritz residual falls below `tol` times the spectral-norm
/// estimate.
pub fn min_eig_matrix_free(hvp: &dyn Fn(&[f64]) -> Vec<f64>, d: usize, tol: f64) -> Result<f64> {
    lanczos_extremes(hvp, d, tol).map(|(m, _)| m)
}

fn lanczos_extremes(hvp: &dyn Fn(&[f64]) -> Vec<f64>, d: usize, tol: f64) -> Result<(f64, f64)> {
    if d == 0 {
        return Err(Error::ZeroDimension);
    }
    if !(tol > 0.0) {
        return Err(invalid("tol", format!("must be positive, got {tol}")));
    }
    let cap = d.min(LANCZOS_CAP);
    let mut start = RngStream::new(0x1a2c_0500, 0);
    let mut basis: Vec<Vec<f64>> = vec![start.unit_sphere(d)];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut last = (f64::NAN, f64::NAN, f64::INFINITY);
    for k in 0..cap {
        let q = &basis[k];
        let mut w = hvp(q);
        if w.len() != d || !is_finite(&w) {
            return Err(Error::NonFiniteDerivative);
        }
        let a = dot(&w, q);
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&w, b);
                w.iter_mut().zip(b).for_each(|(wi, bi)| *wi -= c * bi);
            }
        }
        let bnorm = norm(&w);
        let check = k < 40 || k % 8 == 0 || k + 1 == cap;
        let scale_hint = alpha.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(bnorm);
        let breakdown = bnorm <= 1e-13 * scale_hint.max(1e-300);
        if check || breakdown {
            let (theta, s_last, spectral) = ritz_min(&alpha, &beta);
            let residual = bnorm * s_last.abs();
            last = (theta, spectral, residual);
            if breakdown || residual <= tol * spectral.max(1.0) || k + 1 == d {
                return Ok((theta, spectral));
            }
        }
        beta.push(bnorm);
        basis.push(w.into_iter().map(|v| v / bnorm).collect());
    }
    let (theta, spectral, residual) = last;
    if residual <= tol * spectral.max(1.0) {
        return Ok((theta, spectral));
    }
    Err(Error::NonConvergence {
        iterations: cap,
        residual,
    })
}

/// Smallest eigenvalue of the Lanczos tridiagonal, the last component of
/// its eigenvector and the largest absolute Ritz value.
fn ritz_min(alpha: &[f64], beta: &[f64]) -> (f64, f64, f64) {
    let k = alpha.len();
    let mut t = DMatrix::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (mut imin, mut spectral) = (0, 0.0_f64);
    for i in 0..k {
        if eig.eigenvalues[i] < eig.eigenvalues[imin] {
            imin = i;
        }
        spectral = spectral.max(eig.eigenvalues[i].abs());
    }
    (eig.eigenvalues[imin], eig.eigenvectors[(k - 1, imin)], spectral)
}
