//! Bounded quasi-Newton minimization: box constraints are handled by
//! logistic reparameterization to an unconstrained internal space, with
//! numeric gradients, BFGS curvature updates, Armijo backtracking, and
//! deterministic multi-start.

use crate::numerics::logistic;

/// Mapping between one bounded physical parameter and its unconstrained
/// internal coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParamMap {
    /// Positive parameter searched on a log scale between `lo` and `hi`.
    Log { lo: f64, hi: f64 },
    /// Parameter searched on a linear scale between `lo` and `hi`.
    Linear { lo: f64, hi: f64 },
}

impl ParamMap {
    pub fn lo(&self) -> f64 {
        match *self {
            ParamMap::Log { lo, .. } | ParamMap::Linear { lo, .. } => lo,
        }
    }

    pub fn hi(&self) -> f64 {
        match *self {
            ParamMap::Log { hi, .. } | ParamMap::Linear { hi, .. } => hi,
        }
    }

    fn span(&self) -> (f64, f64) {
        match *self {
            ParamMap::Log { lo, hi } => (lo.ln(), hi.ln()),
            ParamMap::Linear { lo, hi } => (lo, hi),
        }
    }

    /// Physical value for an internal coordinate; strictly inside the
    /// bounds (the logistic is clamped away from 0 and 1 so extreme
    /// coordinates cannot underflow onto a bound).
    pub fn to_physical(&self, y: f64) -> f64 {
        let (a, b) = self.span();
        let v = a + (b - a) * logistic(y).clamp(1e-12, 1.0 - 1e-12);
        match self {
            ParamMap::Log { .. } => v.exp(),
            ParamMap::Linear { .. } => v,
        }
    }

    /// Internal coordinate for a physical value, which is first pulled
    /// strictly inside the bounds.
    pub fn to_internal(&self, theta: f64) -> f64 {
        let (a, b) = self.span();
        let v = match self {
            ParamMap::Log { .. } => theta.max(f64::MIN_POSITIVE).ln(),
            ParamMap::Linear { .. } => theta,
        };
        let p = ((v - a) / (b - a)).clamp(1e-9, 1.0 - 1e-9);
        (p / (1.0 - p)).ln()
    }

    /// True when `theta` sits within a relative margin of either bound,
    /// where the logistic map flattens and the parameter is effectively
    /// pinned.
    pub fn near_boundary(&self, theta: f64) -> bool {
        let (a, b) = self.span();
        let v = match self {
            ParamMap::Log { .. } => theta.max(f64::MIN_POSITIVE).ln(),
            ParamMap::Linear { .. } => theta,
        };
        let p = (v - a) / (b - a);
        !(1e-4..=1.0 - 1e-4).contains(&p)
    }
}

/// Outcome of one minimization run.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    /// Minimizer in internal coordinates.
    pub x: Vec<f64>,
    /// Objective value at `x`.
    pub f: f64,
    pub iterations: usize,
    /// True when the gradient or step criterion was met before the
    /// iteration cap.
    pub converged: bool,
    pub gradient_norm: f64,
}

/// Central-difference gradient with per-coordinate steps scaled to the
/// coordinate magnitude.
pub fn numeric_gradient(f: &(dyn Fn(&[f64]) -> f64 + Sync), x: &[f64]) -> Vec<f64> {
    let h0 = f64::EPSILON.cbrt();
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let h = h0 * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// Central-difference Hessian (row-major, symmetrized).
pub fn numeric_hessian(f: &(dyn Fn(&[f64]) -> f64 + Sync), x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h0 = f64::EPSILON.powf(0.25);
    let steps: Vec<f64> = x.iter().map(|&v| h0 * v.abs().max(1e-12)).collect();
    let f0 = f(x);
    let mut hess = vec![0.0; n * n];
    let mut xp = x.to_vec();
    for i in 0..n {
        // diagonal: (f(+h) - 2 f0 + f(-h)) / h^2
        xp[i] = x[i] + steps[i];
        let fp = f(&xp);
        xp[i] = x[i] - steps[i];
        let fm = f(&xp);
        xp[i] = x[i];
        hess[i * n + i] = (fp - 2.0 * f0 + fm) / (steps[i] * steps[i]);
        for j in 0..i {
            // off-diagonal: four-point cross difference
            xp[i] = x[i] + steps[i];
            xp[j] = x[j] + steps[j];
            let fpp = f(&xp);
            xp[j] = x[j] - steps[j];
            let fpm = f(&xp);
            xp[i] = x[i] - steps[i];
            let fmm = f(&xp);
            xp[j] = x[j] + steps[j];
            let fmp = f(&xp);
            xp[i] = x[i];
            xp[j] = x[j];
            let v = (fpp - fpm - fmp + fmm) / (4.0 * steps[i] * steps[j]);
            hess[i * n + j] = v;
            hess[j * n + i] = v;
        }
    }
    hess
}

/// BFGS minimization from `x0`, with Armijo backtracking line search.
pub fn minimize(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    x0: &[f64],
    max_iter: usize,
    tol: f64,
) -> OptimResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f(&x);
    let mut g = numeric_gradient(f, &x);
    // inverse Hessian estimate
    let mut h_inv = identity(n);
    let mut iterations = 0;
    let mut converged = false;

    for iter in 0..max_iter {
        iterations = iter + 1;
        let g_norm = g.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if g_norm <= tol {
            converged = true;
            break;
        }
        let mut dir = neg_mat_vec(&h_inv, &g);
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) || !slope.is_finite() {
            // curvature estimate went bad: restart steepest descent
            h_inv = identity(n);
            dir = g.iter().map(|&v| -v).collect();
            slope = dot(&dir, &g);
            if slope >= 0.0 {
                break;
            }
        }
        // Armijo backtracking
        let mut step = 1.0;
        let mut x_new = Vec::new();
        let mut f_new = f64::INFINITY;
        let mut accepted = false;
        for _ in 0..50 {
            x_new = x
                .iter()
                .zip(dir.iter())
                .map(|(&xi, &di)| xi + step * di)
                .collect();
            f_new = f(&x_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            converged = g_norm <= tol.max(1e-5);
            break;
        }
        let g_new = numeric_gradient(f, &x_new);
        let s: Vec<f64> = x_new.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(g.iter()).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 {
            bfgs_update(&mut h_inv, &s, &yv, sy);
        }
        let f_drop = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if f_drop.abs() <= tol * (fx.abs() + tol) {
            converged = true;
            break;
        }
    }
    let gradient_norm = g.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    OptimResult {
        x,
        f: fx,
        iterations,
        converged: converged || gradient_norm <= tol.max(1e-5),
        gradient_norm,
    }
}

/// Minimize from several starts; returns the winning start index and its
/// result. Parallel over starts with a deterministic reduction: the lowest
/// objective wins and ties break to the lowest index.
pub fn multi_start_minimize(
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    inits: &[Vec<f64>],
    max_iter: usize,
    tol: f64,
) -> (usize, OptimResult) {
    use rayon::prelude::*;
    assert!(!inits.is_empty());
    let results: Vec<OptimResult> = inits
        .par_iter()
        .map(|x0| minimize(f, x0, max_iter, tol))
        .collect();
    let mut best = 0;
    for (i, r) in results.iter().enumerate().skip(1) {
        if r.f < results[best].f {
            best = i;
        }
    }
    (best, results[best].clone())
}

fn identity(n: usize) -> Vec<f64> {
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn neg_mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| -(0..n).map(|j| m[i * n + j] * v[j]).sum::<f64>())
        .collect()
}

/// Sherman-Morrison style BFGS update of the inverse Hessian.
fn bfgs_update(h_inv: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    // H' = (I - rho s y^T) H (I - rho y s^T) + rho s s^T
    let hy: Vec<f64> = (0..n)
        .map(|i| (0..n).map(|j| h_inv[i * n + j] * y[j]).sum::<f64>())
        .collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h_inv[i * n + j] += -rho * (s[i] * hy[j] + hy[i] * s[j])
                + rho * rho * yhy * s[i] * s[j]
                + rho * s[i] * s[j];
        }
    }
}
