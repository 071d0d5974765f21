//! Preconditioned L-BFGS, golden-section search and bisection.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub max_iter: usize,
    pub memory: usize,
    /// Stop when `||grad||_inf < grad_tol (1 + |f|)`.
    pub grad_tol: f64,
    /// Stop when `f` decreased by less than `stall_tol (1 + |f|)` over `stall_window` steps.
    pub stall_tol: f64,
    pub stall_window: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            max_iter: 5000,
            memory: 12,
            grad_tol: 1e-8,
            stall_tol: 1e-12,
            stall_window: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_inf: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Minimise `f` from `x0`. `f(x, grad)` returns the value and writes the
/// gradient; it may return `+inf` outside the domain, and such trial points
/// are rejected by the line search. `diag` is a positive diagonal
/// approximation of the Hessian used as the initial metric.
///
/// `x0` must have a finite value.
pub fn lbfgs(
    mut f: impl FnMut(&[f64], &mut [f64]) -> f64,
    x0: Vec<f64>,
    diag: &[f64],
    opts: &LbfgsOptions,
) -> Result<Minimum> {
    let n = x0.len();
    assert_eq!(diag.len(), n);
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    if !fx.is_finite() {
        return Err(Error::Domain("optimiser started at a point of infinite value".into()));
    }
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut recent: VecDeque<f64> = VecDeque::new();
    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut alpha = vec![0.0; opts.memory];
    let mut gamma = 1.0;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        if inf_norm(&g) < opts.grad_tol * (1.0 + fx.abs()) {
            converged = true;
            break;
        }
        if recent.len() == opts.stall_window {
            let old = recent[0];
            if old - fx < opts.stall_tol * (1.0 + fx.abs()) {
                converged = true;
                break;
            }
        }
        iterations += 1;
        // Two-loop recursion with initial metric gamma * diag^{-1}.
        dir.copy_from_slice(&g);
        for (k, (s, y, rho)) in history.iter().enumerate().rev() {
            alpha[k] = rho * dot(s, &dir);
            dir.iter_mut().zip(y).for_each(|(d, yi)| *d -= alpha[k] * yi);
        }
        dir.iter_mut().zip(diag).for_each(|(d, w)| *d *= gamma / w);
        for (k, (s, y, rho)) in history.iter().enumerate() {
            let beta = rho * dot(y, &dir);
            dir.iter_mut().zip(s).for_each(|(d, si)| *d += (alpha[k] - beta) * si);
        }
        dir.iter_mut().for_each(|d| *d = -*d);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            gamma = 1.0;
            dir.iter_mut().zip(&g).zip(diag).for_each(|((d, gi), w)| *d = -gi / w);
            slope = dot(&g, &dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            xt.iter_mut()
                .zip(&x)
                .zip(&dir)
                .for_each(|((t, xi), di)| *t = xi + step * di);
            let ft = f(&xt, &mut gt);
            if ft.is_finite() && ft <= fx + 1e-4 * step * slope {
                accepted = Some(ft);
                break;
            }
            step *= 0.5;
        }
        let Some(ft) = accepted else {
            if history.is_empty() {
                break;
            }
            history.clear();
            gamma = 1.0;
            continue;
        };
        let s: Vec<f64> = xt.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-300 {
            let ydy: f64 = y.iter().zip(diag).map(|(yi, w)| yi * yi / w).sum();
            gamma = sy / ydy;
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        recent.push_back(fx);
        if recent.len() > opts.stall_window {
            recent.pop_front();
        }
        fx = ft;
    }
    Ok(Minimum {
        grad_inf: inf_norm(&g),
        x,
        value: fx,
        iterations,
        converged,
    })
}

/// Golden-section minimisation of a unimodal `f` on `[a, b]`; returns `(argmin, min)`.
pub fn golden_section(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Root of `f` in `[a, b]` by bisection, to absolute width `tol`.
pub fn bisect(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    let mut fa = f(a);
    let fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if !(fa.signum() != fb.signum()) || !fa.is_finite() || !fb.is_finite() {
        return Err(Error::Bracket(format!(
            "no sign change on [{a}, {b}]: f(a) = {fa}, f(b) = {fb}"
        )));
    }
    for _ in 0..400 {
        if (b - a).abs() <= tol {
            break;
        }
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lbfgs_rosenbrock() {
        let f = |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        };
        let m = lbfgs(f, vec![-1.2, 1.0], &[1.0, 1.0], &LbfgsOptions::default()).unwrap();
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lbfgs_respects_barrier() {
        // f = x + 1/x on x > 0, +inf elsewhere: minimum at 1.
        let f = |x: &[f64], g: &mut [f64]| {
            if x[0] <= 0.0 {
                return f64::INFINITY;
            }
            g[0] = 1.0 - 1.0 / (x[0] * x[0]);
            x[0] + 1.0 / x[0]
        };
        let m = lbfgs(f, vec![30.0], &[1.0], &LbfgsOptions::default()).unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn lbfgs_ill_conditioned_quadratic_with_preconditioner() {
        let w: Vec<f64> = (0..50).map(|k| 10f64.powf(k as f64 / 7.0)).collect();
        let f = |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for k in 0..x.len() {
                g[k] = w[k] * (x[k] - 1.0);
                v += 0.5 * w[k] * (x[k] - 1.0).powi(2);
            }
            v
        };
        let m = lbfgs(f, vec![0.0; 50], &w, &LbfgsOptions::default()).unwrap();
        assert!(m.iterations <= 3);
        assert!(m.x.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn golden_and_bisect() {
        let (x, fx) = golden_section(|t| (t - 0.3).powi(2) + 2.0, -1.0, 4.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-6 && (fx - 2.0).abs() < 1e-15);
        let r = bisect(|t| t * t - 2.0, 0.0, 2.0, 1e-14).unwrap();
        assert!((r - 2f64.sqrt()).abs() < 1e-13);
        assert!(matches!(bisect(|t| t * t + 1.0, -1.0, 1.0, 1e-9), Err(Error::Bracket(_))));
    }
}
