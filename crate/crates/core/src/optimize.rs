//! Scalar and gradient-based minimization plus a finite-difference gradient check.

use crate::error::{CalibError, Result};

/// Armijo sufficient-decrease constant.
pub const ARMIJO_C: f64 = 1e-4;

const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMinResult {
    pub argmin: f64,
    pub value: f64,
    pub iterations: usize,
    pub at_boundary: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradMinResult {
    pub params: Vec<f64>,
    pub value: f64,
    pub grad_max_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
///
/// The returned argmin lies within `tol` of the true minimizer; `at_boundary`
/// is set when it is within `tol` of either end of the interval.
pub fn minimize_scalar<F>(mut f: F, lo: f64, hi: f64, tol: f64) -> Result<ScalarMinResult>
where
    F: FnMut(f64) -> f64,
{
    if !(lo < hi) || !(tol > 0.0) {
        return Err(CalibError::InvalidArgument("need lo < hi and tol > 0"));
    }
    let mut eval = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(CalibError::NonFiniteObjective { at: vec![x] })
        }
    };

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = eval(c)?;
    let mut fd = eval(d)?;
    let mut iterations = 0;
    while b - a > tol {
        let width = b - a;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = eval(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = eval(d)?;
        }
        iterations += 1;
        if b - a >= width {
            // interval no longer shrinks at this floating-point resolution
            break;
        }
    }

    let argmin = 0.5 * (a + b);
    let value = eval(argmin)?;
    Ok(ScalarMinResult {
        argmin,
        value,
        iterations,
        at_boundary: argmin - lo <= tol || hi - argmin <= tol,
    })
}

fn max_norm(g: &[f64]) -> f64 {
    g.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient descent with Armijo backtracking (step halving).
///
/// The first trial step is 1.0; later iterations start the line search from
/// the Barzilai–Borwein step `s·s / s·y`, which keeps ill-conditioned
/// problems tractable. Accepted steps never increase the objective.
pub fn minimize_grad<F>(
    mut f_and_grad: F,
    init: Vec<f64>,
    grad_tol: f64,
    max_iters: usize,
) -> Result<GradMinResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if !(grad_tol > 0.0) {
        return Err(CalibError::InvalidArgument("grad_tol must be positive"));
    }
    let mut x = init;
    let (mut fx, mut g) = f_and_grad(&x);
    if g.len() != x.len() {
        return Err(CalibError::LengthMismatch {
            left: g.len(),
            right: x.len(),
        });
    }
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(CalibError::NonFiniteObjective { at: x });
    }

    let mut step = 1.0;
    let mut iterations = 0;
    loop {
        let gnorm = max_norm(&g);
        if gnorm < grad_tol || iterations >= max_iters {
            return Ok(GradMinResult {
                params: x,
                value: fx,
                grad_max_norm: gnorm,
                iterations,
                converged: gnorm < grad_tol,
            });
        }

        let g2 = dot(&g, &g);
        let mut t = step;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - t * gi).collect();
            let (ft, gt) = f_and_grad(&trial);
            if ft.is_finite() && ft <= fx - ARMIJO_C * t * g2 && gt.iter().all(|v| v.is_finite()) {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            return Err(CalibError::LineSearchFailure { iterations });
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        step = if sy > 0.0 {
            (dot(&s, &s) / sy).clamp(1e-10, 1e10)
        } else {
            1.0
        };

        x = x_new;
        fx = f_new;
        g = g_new;
        iterations += 1;
    }
}

/// Largest relative error between the analytic gradient and central
/// differences `(f(x + h e_i) − f(x − h e_i)) / 2h`, relative to
/// `max(|analytic_i|, 1e-8)`.
pub fn check_gradient<F>(mut f_and_grad: F, point: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    if !(h > 0.0) {
        return Err(CalibError::InvalidArgument("h must be positive"));
    }
    let (f0, analytic) = f_and_grad(point);
    if !f0.is_finite() {
        return Err(CalibError::NonFiniteObjective { at: point.to_vec() });
    }
    if analytic.len() != point.len() {
        return Err(CalibError::LengthMismatch {
            left: analytic.len(),
            right: point.len(),
        });
    }
    let mut x = point.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let fp = f_and_grad(&x).0;
        x[i] = orig - h;
        let fm = f_and_grad(&x).0;
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(CalibError::NonFiniteObjective { at: x });
        }
        let numeric = (fp - fm) / (2.0 * h);
        let rel = (numeric - analytic[i]).abs() / analytic[i].abs().max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
