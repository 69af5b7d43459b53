//! Box-constrained Levenberg-Marquardt on a Huber-robust objective.
//!
//! Minimizes `Σ huber_δ(r_i(x))` subject to `lo ≤ x ≤ hi`. Each outer
//! iteration reweights the residuals (IRLS: weight 1 inside the quadratic
//! zone, `δ/|r|` outside), which gives a quadratic majorizer of the Huber
//! objective at the current point. A damped Gauss-Newton step on that
//! majorizer is taken over the free variables; variables pinned at a bound
//! with the gradient pointing outward are held fixed. Steps are only
//! accepted when the true robust objective strictly decreases.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::law_models::Interval;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub huber_delta: f64,
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            huber_delta: 1e-3,
            max_iterations: 500,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after the initial point and after every accepted step.
    pub history: Vec<f64>,
}

/// Huber penalty: `r²/2` for `|r| ≤ δ`, `δ(|r| − δ/2)` beyond.
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        1.0
    } else {
        delta / a
    }
}

fn objective(r: &[f64], delta: f64) -> f64 {
    r.iter().map(|&v| huber(v, delta)).sum()
}

const MAX_DAMPING: f64 = 1e30;

/// Solves the bounded robust least-squares problem from `init`.
///
/// `residuals(x)` returns `m` residuals; `jacobian(x)` returns their `m × n`
/// Jacobian. Exhausting the iteration budget is not an error: the result
/// comes back with `converged == false`.
pub fn robust_least_squares<R, J>(
    residuals: R,
    jacobian: J,
    init: &[f64],
    bounds: &[Interval],
    opts: &SolverOptions,
) -> Result<Solution>
where
    R: Fn(&[f64]) -> Vec<f64>,
    J: Fn(&[f64]) -> DMatrix<f64>,
{
    let n = init.len();
    if bounds.len() != n {
        return Err(Error::Argument(format!(
            "{} bounds for {n} parameters",
            bounds.len()
        )));
    }
    if !(opts.huber_delta > 0.0 && opts.gradient_tolerance > 0.0 && opts.step_tolerance > 0.0) {
        return Err(Error::Argument("solver tolerances must be positive".into()));
    }
    for (j, (v, b)) in init.iter().zip(bounds).enumerate() {
        if !v.is_finite() || !b.contains(*v) {
            return Err(Error::Argument(format!(
                "initial parameter {j} = {v} lies outside [{}, {}]",
                b.lo, b.hi
            )));
        }
    }

    let delta = opts.huber_delta;
    let mut x = init.to_vec();
    let mut r = residuals(&x);
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument(
            "residuals are not finite at the initial point".into(),
        ));
    }
    let m = r.len();
    let mut f = objective(&r, delta);
    let mut history = vec![f];
    let mut damping: Option<f64> = None;
    let mut growth = 2.0;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        let jac = jacobian(&x);
        if jac.nrows() != m || jac.ncols() != n {
            return Err(Error::Argument(format!(
                "jacobian is {}x{}, expected {m}x{n}",
                jac.nrows(),
                jac.ncols()
            )));
        }
        let w: Vec<f64> = r.iter().map(|&v| huber_weight(v, delta)).collect();
        let wr = DVector::from_iterator(m, r.iter().zip(&w).map(|(r, w)| r * w));
        let grad = jac.tr_mul(&wr);

        let free: Vec<usize> = (0..n)
            .filter(|&j| {
                let at_lo = x[j] <= bounds[j].lo && grad[j] > 0.0;
                let at_hi = x[j] >= bounds[j].hi && grad[j] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        let pg = free.iter().map(|&j| grad[j].abs()).fold(0.0, f64::max);
        if pg <= opts.gradient_tolerance {
            converged = true;
            break;
        }

        let k = free.len();
        let mut jw = DMatrix::zeros(m, k);
        for (c, &j) in free.iter().enumerate() {
            for i in 0..m {
                jw[(i, c)] = jac[(i, j)] * w[i].sqrt();
            }
        }
        let h = jw.tr_mul(&jw);
        let g = DVector::from_iterator(k, free.iter().map(|&j| grad[j]));
        let max_diag = (0..k).map(|c| h[(c, c)]).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let mut mu = *damping.get_or_insert(1e-3 * max_diag);

        loop {
            let mut a = h.clone();
            for c in 0..k {
                a[(c, c)] += mu * h[(c, c)].max(1e-12 * max_diag);
            }
            let Some(chol) = a.cholesky() else {
                mu *= growth;
                growth *= 2.0;
                if mu > MAX_DAMPING * max_diag {
                    break 'outer;
                }
                continue;
            };
            let step = chol.solve(&(-&g));

            let mut x_new = x.clone();
            for (c, &j) in free.iter().enumerate() {
                x_new[j] = bounds[j].clamp(x[j] + step[c]);
            }
            let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
            let s_norm = s.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            let x_norm = x.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
            if s_norm <= opts.step_tolerance * (x_norm + opts.step_tolerance) {
                converged = true;
                break 'outer;
            }

            let r_new = residuals(&x_new);
            let f_new = if r_new.iter().all(|v| v.is_finite()) {
                objective(&r_new, delta)
            } else {
                f64::INFINITY
            };

            if f_new < f {
                // Gain ratio against the reweighted quadratic model.
                let js = &jac * DVector::from_vec(s);
                let model: f64 = (0..m)
                    .map(|i| 0.5 * w[i] * ((r[i] + js[i]).powi(2) - r[i].powi(2)))
                    .sum();
                let predicted = -model;
                let rho = if predicted > 0.0 { (f - f_new) / predicted } else { 0.0 };
                mu *= (1.0 - (2.0 * rho - 1.0).powi(3)).max(1.0 / 3.0);
                growth = 2.0;
                damping = Some(mu);
                x = x_new;
                r = r_new;
                f = f_new;
                history.push(f);
                continue 'outer;
            }

            mu *= growth;
            growth *= 2.0;
            if mu > MAX_DAMPING * max_diag {
                break 'outer;
            }
        }
    }

    Ok(Solution {
        x,
        objective: f,
        converged,
        iterations,
        history,
    })
}
