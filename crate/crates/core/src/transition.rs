//! Numerical M-step for the transition matrix under the stationarity
//! constraint: maximize
//!
//! ```text
//!   sum_v a_v log rho_v(Pi)  +  sum_{vb,v} c_{vb,v} log pi_{vb,v}
//! ```
//!
//! over row-stochastic `Pi`, where `rho(Pi)` is the implied stationary
//! vector. Rows are parametrized by unconstrained logits with the diagonal
//! entry as reference category, which keeps every iterate strictly positive
//! and hence irreducible. Gradients are central finite differences; ascent is
//! a BFGS iteration with backtracking, and the best evaluated iterate is
//! returned, so the criterion never decreases relative to the warm start.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::model::stationary_distribution;

const GRAD_STEP: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-7;
const STEP_TOL: f64 = 1e-9;
const MAX_ITER: usize = 200;
const LOGIT_CAP: f64 = 200.0;

/// Aggregated posterior weights defining the criterion: `initial_weights`
/// multiply the log stationary probabilities, `pair_counts` the log
/// transition probabilities.
#[derive(Clone, Debug)]
pub struct TransitionCriterion {
    pub initial_weights: Array1<f64>,
    pub pair_counts: Array2<f64>,
}

impl TransitionCriterion {
    pub fn new(initial_weights: Array1<f64>, pair_counts: Array2<f64>) -> Result<Self> {
        let k2 = initial_weights.len();
        if pair_counts.nrows() != k2 || pair_counts.ncols() != k2 {
            return Err(Error::DimensionMismatch(format!(
                "initial weights have length {k2} but pair counts are {}x{}",
                pair_counts.nrows(),
                pair_counts.ncols()
            )));
        }
        let ok = |x: &f64| x.is_finite() && *x >= 0.0;
        if !initial_weights.iter().all(ok) || !pair_counts.iter().all(ok) {
            return Err(Error::NonFinite(
                "transition criterion weights must be nonnegative and finite".into(),
            ));
        }
        Ok(Self {
            initial_weights,
            pair_counts,
        })
    }

    pub fn k2(&self) -> usize {
        self.initial_weights.len()
    }

    /// Criterion value at a strictly positive row-stochastic matrix.
    pub fn value(&self, pi: &Array2<f64>) -> Result<f64> {
        let rho = stationary_distribution(pi)?;
        let k2 = self.k2();
        let mut total = 0.0;
        for v in 0..k2 {
            let a = self.initial_weights[v];
            if a > 0.0 {
                total += a * rho[v].ln();
            }
            for vb in 0..k2 {
                let c = self.pair_counts[(vb, v)];
                if c > 0.0 {
                    total += c * pi[(vb, v)].ln();
                }
            }
        }
        Ok(total)
    }
}

/// Diagonal-referenced logits of a positive stochastic matrix, flattened by
/// rows with the diagonal position skipped.
fn to_logits(pi: &Array2<f64>) -> Vec<f64> {
    let k2 = pi.nrows();
    let mut x = Vec::with_capacity(k2 * (k2 - 1));
    for vb in 0..k2 {
        let base = pi[(vb, vb)].max(1e-300);
        for v in 0..k2 {
            if v != vb {
                x.push((pi[(vb, v)].max(1e-300) / base).ln().clamp(-LOGIT_CAP, LOGIT_CAP));
            }
        }
    }
    x
}

fn from_logits(x: &[f64], k2: usize) -> Array2<f64> {
    let mut pi = Array2::zeros((k2, k2));
    let mut idx = 0;
    for vb in 0..k2 {
        let mut logits = vec![0.0; k2];
        for v in 0..k2 {
            if v != vb {
                logits[v] = x[idx].clamp(-LOGIT_CAP, LOGIT_CAP);
                idx += 1;
            }
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in 0..k2 {
            let e = (logits[v] - m).exp();
            pi[(vb, v)] = e;
            total += e;
        }
        for v in 0..k2 {
            pi[(vb, v)] /= total;
        }
    }
    pi
}

/// Maximize the constrained criterion starting from a positive row-stochastic
/// warm start. The returned matrix satisfies
/// `criterion(result) >= criterion(start) - 1e-12`.
pub fn maximize_constrained_transitions(
    crit: &TransitionCriterion,
    start: &Array2<f64>,
) -> Result<Array2<f64>> {
    let k2 = crit.k2();
    if start.nrows() != k2 || start.ncols() != k2 {
        return Err(Error::DimensionMismatch(format!(
            "start is {}x{}, criterion has {k2} states",
            start.nrows(),
            start.ncols()
        )));
    }
    if k2 == 1 {
        return Ok(Array2::ones((1, 1)));
    }

    let n = k2 * (k2 - 1);
    let objective = |x: &[f64]| -> Result<f64> { crit.value(&from_logits(x, k2)) };
    let gradient = |x: &mut Vec<f64>| -> Result<Vec<f64>> {
        let mut g = vec![0.0; n];
        for i in 0..n {
            let orig = x[i];
            x[i] = orig + GRAD_STEP;
            let hi = objective(x)?;
            x[i] = orig - GRAD_STEP;
            let lo = objective(x)?;
            x[i] = orig;
            g[i] = (hi - lo) / (2.0 * GRAD_STEP);
        }
        Ok(g)
    };

    let mut x = to_logits(start);
    let mut fx = objective(&x)?;
    let mut best_x = x.clone();
    let mut best_f = fx;
    let mut g = gradient(&mut x)?;
    let mut h = identity(n);

    for _ in 0..MAX_ITER {
        let gnorm = g.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if gnorm <= GRAD_TOL {
            break;
        }
        // Ascent direction from the inverse-Hessian approximation; fall back
        // to steepest ascent when it is not one.
        let mut d = matvec(&h, &g);
        if dot(&d, &g) <= 0.0 {
            h = identity(n);
            d = g.clone();
        }

        let slope = dot(&g, &d);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let x_new: Vec<f64> = x.iter().zip(&d).map(|(&xi, &di)| xi + alpha * di).collect();
            let f_new = objective(&x_new)?;
            if f_new >= fx + 1e-4 * alpha * slope {
                accepted = Some((x_new, f_new));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new)) = accepted else {
            break;
        };

        let step_norm = x_new
            .iter()
            .zip(&x)
            .fold(0.0f64, |m, (&a, &b)| m.max((a - b).abs()));
        let mut xn = x_new;
        let g_new = gradient(&mut xn)?;

        // BFGS update on the maximization problem: y uses the negated
        // gradient change so the standard inverse update applies.
        let s: Vec<f64> = xn.iter().zip(&x).map(|(&a, &b)| a - b).collect();
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(&a, &b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm2(&s) * norm2(&y) {
            bfgs_update(&mut h, &s, &y, sy);
        }

        x = xn;
        fx = f_new;
        g = g_new;
        if fx > best_f {
            best_f = fx;
            best_x = x.clone();
        }
        if step_norm <= STEP_TOL {
            break;
        }
    }

    Ok(from_logits(&best_x, k2))
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn matvec(h: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = dot(&h[i * n..(i + 1) * n], v);
    }
    out
}

/// Inverse-Hessian BFGS update
/// `H <- (I - s y'/sy) H (I - y s'/sy) + s s'/sy`.
fn bfgs_update(h: &mut [f64], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let hy = matvec(h, y);
    let yhy = dot(y, &hy);
    let rho = 1.0 / sy;
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] += rho * rho * (sy + yhy) * s[i] * s[j]
                - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}
