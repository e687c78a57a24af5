//! Central finite-difference calculus. Every derivative taken elsewhere in
//! the crate goes through this module so step sizes stay centrally
//! configurable.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Finite-difference configuration.
///
/// `step_scale` is the relative first-derivative step: `h = step_scale *
/// max(1, |x_i|)`. Second derivatives use `step_scale^(2/3)`, so the default
/// 1e-6 gives the 1e-4 scale appropriate for second differences in f64.
/// With `richardson` one extrapolation level is applied to first
/// derivatives, pushing truncation error to O(h^4).
#[derive(Debug, Clone, Copy)]
pub struct FdScheme {
    pub step_scale: f64,
    pub richardson: bool,
}

impl Default for FdScheme {
    fn default() -> Self {
        FdScheme {
            step_scale: 1e-6,
            richardson: false,
        }
    }
}

impl FdScheme {
    /// Scheme used by the solver and trajectory layers: a larger step plus
    /// Richardson extrapolation keeps rounding noise near 1e-12 while the
    /// extrapolated truncation error stays below it.
    pub fn accurate() -> Self {
        FdScheme {
            step_scale: 1e-4,
            richardson: true,
        }
    }

    pub fn with_step(step_scale: f64) -> Self {
        FdScheme {
            step_scale,
            richardson: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_scale > 0.0 && self.step_scale < 1e-2) {
            return Err(Error::Invalid(format!(
                "fd step scale {} outside (0, 1e-2)",
                self.step_scale
            )));
        }
        Ok(())
    }

    fn grad_step(&self, coord: f64) -> f64 {
        self.step_scale * coord.abs().max(1.0)
    }

    fn hess_step(&self, coord: f64) -> f64 {
        self.step_scale.powf(2.0 / 3.0) * coord.abs().max(1.0)
    }
}

fn central<F>(f: &mut F, x: &mut [f64], i: usize, h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let orig = x[i];
    x[i] = orig + h;
    let fp = f(x);
    x[i] = orig - h;
    let fm = f(x);
    x[i] = orig;
    let (fp, fm) = (fp?, fm?);
    let d = (fp - fm) / (2.0 * h);
    if !d.is_finite() {
        return Err(Error::NonFinite("finite-difference stencil".into()));
    }
    Ok(d)
}

/// Gradient of a scalar field by central differences.
pub fn grad_fd<F>(mut f: F, x: &[f64], scheme: FdScheme) -> Result<DVector<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    scheme.validate()?;
    let mut work = x.to_vec();
    let mut out = DVector::zeros(x.len());
    for i in 0..x.len() {
        let h = scheme.grad_step(x[i]);
        let d = if scheme.richardson {
            let coarse = central(&mut f, &mut work, i, h)?;
            let fine = central(&mut f, &mut work, i, h / 2.0)?;
            (4.0 * fine - coarse) / 3.0
        } else {
            central(&mut f, &mut work, i, h)?
        };
        out[i] = d;
    }
    Ok(out)
}

/// Hessian of a scalar field by central second differences, symmetrized by
/// averaging; the output equals its transpose exactly.
pub fn hess_fd<F>(mut f: F, x: &[f64], scheme: FdScheme) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    scheme.validate()?;
    let n = x.len();
    let mut work = x.to_vec();
    let f0 = f(&work)?;
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let hi = scheme.hess_step(x[i]);
        let oi = work[i];
        work[i] = oi + hi;
        let fp = f(&work)?;
        work[i] = oi - hi;
        let fm = f(&work)?;
        work[i] = oi;
        let d = (fp - 2.0 * f0 + fm) / (hi * hi);
        if !d.is_finite() {
            return Err(Error::NonFinite("finite-difference stencil".into()));
        }
        out[(i, i)] = d;
        for j in (i + 1)..n {
            let hj = scheme.hess_step(x[j]);
            let oj = work[j];
            work[i] = oi + hi;
            work[j] = oj + hj;
            let fpp = f(&work)?;
            work[j] = oj - hj;
            let fpm = f(&work)?;
            work[i] = oi - hi;
            work[j] = oj + hj;
            let fmp = f(&work)?;
            work[j] = oj - hj;
            let fmm = f(&work)?;
            work[i] = oi;
            work[j] = oj;
            let d = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            if !d.is_finite() {
                return Err(Error::NonFinite("finite-difference stencil".into()));
            }
            out[(i, j)] = d;
            out[(j, i)] = d;
        }
    }
    Ok(out)
}

/// Jacobian of a vector field by central differences, column by column.
pub fn jacobian_fd<F>(mut f: F, x: &[f64], scheme: FdScheme) -> Result<DMatrix<f64>>
where
    F: FnMut(&[f64]) -> Result<DVector<f64>>,
{
    scheme.validate()?;
    let n = x.len();
    let mut work = x.to_vec();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let h = scheme.grad_step(x[j]);
        let orig = work[j];
        work[j] = orig + h;
        let fp = f(&work);
        work[j] = orig - h;
        let fm = f(&work);
        work[j] = orig;
        let col = (fp? - fm?) / (2.0 * h);
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("finite-difference stencil".into()));
        }
        cols.push(col);
    }
    let m = cols.first().map(|c| c.len()).unwrap_or(0);
    let mut out = DMatrix::zeros(m, n);
    for (j, col) in cols.into_iter().enumerate() {
        out.set_column(j, &col);
    }
    Ok(out)
}

/// Derivative at 0 of a scalar function of one parameter, central step `h`
/// (Richardson-extrapolated when the scheme asks for it).
pub fn curve_derivative<F>(mut f: F, h: f64, richardson: bool) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut central = |hh: f64| -> Result<f64> {
        let d = (f(hh)? - f(-hh)?) / (2.0 * hh);
        if !d.is_finite() {
            return Err(Error::NonFinite("curve stencil".into()));
        }
        Ok(d)
    };
    if richardson {
        let coarse = central(h)?;
        let fine = central(h / 2.0)?;
        Ok((4.0 * fine - coarse) / 3.0)
    } else {
        central(h)
    }
}
