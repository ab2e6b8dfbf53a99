//! Shared estimation machinery: fit configuration, multi-start EM driver,
//! quantile-anchored initialization, seed derivation, and the weighted
//! Gaussian accumulator used by every M-step.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::TwoWayArray;
use crate::error::Result;
use crate::model::{ModelDims, ModelParams, VAR_FLOOR};

/// Estimator identifier carried by fit results and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Method {
    /// Exact likelihood over all row configurations.
    Full,
    /// Row composite likelihood.
    RowCl,
    /// Row-column composite likelihood.
    RowColCl,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::RowCl => "row",
            Method::RowColCl => "rowcol",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        match s {
            "full" => Some(Method::Full),
            "row" | "row_cl" => Some(Method::RowCl),
            "rowcol" | "rowcol_cl" | "row-column" => Some(Method::RowColCl),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Options shared by all three estimators.
#[derive(Clone, Debug)]
pub struct FitConfig {
    /// Number of random initializations; the best final objective wins,
    /// ties broken by lowest start index.
    pub n_starts: usize,
    /// Maximum EM iterations per start.
    pub max_iter: usize,
    /// Relative objective-change stopping tolerance.
    pub tol: f64,
    /// Seed controlling every random choice of the fit.
    pub seed: u64,
    /// Cap on `k1^r` for the exact-likelihood path.
    pub enum_cap: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            n_starts: 10,
            max_iter: 1000,
            tol: 1e-8,
            seed: 0,
            enum_cap: 1 << 20,
        }
    }
}

impl FitConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

/// Outcome of one estimator run.
#[derive(Clone, Debug)]
pub struct FitResult {
    pub params: ModelParams,
    /// Objective value at every evaluated iterate, starting at the initial
    /// parameters of the winning start.
    pub trace: Vec<f64>,
    /// False when the iteration cap was reached before the tolerance.
    pub converged: bool,
    /// Number of M-steps taken by the winning start.
    pub n_iter: usize,
    pub seed: u64,
    pub method: Method,
    /// Index of the winning start.
    pub best_start: usize,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stream derivation: one base seed plus integer tags yields
/// independent, order-insensitive streams for starts, replicates, and splits.
pub(crate) fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(base);
    for &t in tags {
        acc = splitmix64(acc ^ splitmix64(t));
    }
    acc
}

pub(crate) fn rng_for(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

fn dirichlet_flat(k: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    let mut v = Array1::zeros(k);
    let mut total = 0.0;
    for x in v.iter_mut() {
        let e = -(1.0 - rng.gen::<f64>()).ln();
        *x = e;
        total += e;
    }
    v.mapv_inplace(|x| x / total);
    v
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = h - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

/// Random starting point: flat-Dirichlet mass and transition rows, means at
/// a random permutation of `k1*k2` evenly spaced empirical quantiles, and
/// variance at half the empirical variance.
pub(crate) fn init_params(
    sorted_observed: &[f64],
    dims: &ModelDims,
    rng: &mut ChaCha8Rng,
) -> ModelParams {
    let lambda = dirichlet_flat(dims.k1, rng);
    let mut pi = Array2::zeros((dims.k2, dims.k2));
    for v in 0..dims.k2 {
        pi.row_mut(v).assign(&dirichlet_flat(dims.k2, rng));
    }

    let m = dims.k1 * dims.k2;
    let mut anchors: Vec<f64> = (0..m)
        .map(|t| quantile(sorted_observed, (t + 1) as f64 / (m + 1) as f64))
        .collect();
    anchors.shuffle(rng);
    let psi = Array2::from_shape_vec((dims.k1, dims.k2), anchors).expect("k1*k2 anchors");

    let n = sorted_observed.len() as f64;
    let mean = sorted_observed.iter().sum::<f64>() / n;
    let var = sorted_observed
        .iter()
        .map(|&y| (y - mean) * (y - mean))
        .sum::<f64>()
        / n;
    let sigma2 = (0.5 * var).max(VAR_FLOOR);

    ModelParams::new(lambda, pi, psi, sigma2)
}

/// Multi-start EM driver. `step` evaluates the objective at the current
/// parameters and performs one M-step; the driver handles the trace, the
/// stopping rule, and best-start selection.
pub(crate) fn run_em<F>(
    data: &TwoWayArray,
    dims: &ModelDims,
    config: &FitConfig,
    method: Method,
    mut step: F,
) -> Result<FitResult>
where
    F: FnMut(&TwoWayArray, &ModelParams) -> Result<(f64, ModelParams)>,
{
    let sorted = data.observed_values();
    let mut best: Option<FitResult> = None;

    for start in 0..config.n_starts.max(1) {
        let mut rng = rng_for(config.seed, &[0x01, start as u64]);
        let mut params = init_params(&sorted, dims, &mut rng);
        let mut trace: Vec<f64> = Vec::new();
        let mut converged = false;

        for iter in 0..=config.max_iter {
            let (obj, next) = step(data, &params)?;
            trace.push(obj);
            if let Some(&prev) = trace.len().checked_sub(2).and_then(|i| trace.get(i)) {
                if (obj - prev) / (prev.abs() + 1.0) < config.tol {
                    converged = true;
                    break;
                }
            }
            if iter == config.max_iter {
                break;
            }
            params = next;
        }

        let result = FitResult {
            params,
            n_iter: trace.len().saturating_sub(1),
            converged,
            seed: config.seed,
            method,
            best_start: start,
            trace,
        };
        let better = match &best {
            None => true,
            Some(b) => result.objective() > b.objective(),
        };
        if better {
            best = Some(result);
        }
    }
    Ok(best.expect("at least one start"))
}

/// Weighted accumulator for the Gaussian M-step: collects per-(u, v) weight,
/// weighted value, and weighted square sums over observed cells, then yields
/// the updated means and the self-normalized common variance.
pub(crate) struct GaussAccum {
    pub(crate) den: Array2<f64>,
    pub(crate) num: Array2<f64>,
    pub(crate) num2: Array2<f64>,
}

impl GaussAccum {
    pub fn new(k1: usize, k2: usize) -> Self {
        Self {
            den: Array2::zeros((k1, k2)),
            num: Array2::zeros((k1, k2)),
            num2: Array2::zeros((k1, k2)),
        }
    }

    #[inline]
    pub fn add(&mut self, u: usize, v: usize, w: f64, y: f64) {
        self.den[(u, v)] += w;
        self.num[(u, v)] += w * y;
        self.num2[(u, v)] += w * y * y;
    }

    /// Updated `(psi, sigma2)`. Cells with vanishing weight keep their
    /// previous mean; the variance divides by the total accumulated weight.
    pub fn finish(&self, prev_psi: &Array2<f64>) -> (Array2<f64>, f64) {
        let (k1, k2) = self.den.dim();
        let mut psi = Array2::zeros((k1, k2));
        let mut ss = 0.0;
        let mut total = 0.0;
        for u in 0..k1 {
            for v in 0..k2 {
                let den = self.den[(u, v)];
                let mu = if den > 1e-12 {
                    self.num[(u, v)] / den
                } else {
                    prev_psi[(u, v)]
                };
                psi[(u, v)] = mu;
                ss += self.num2[(u, v)] - 2.0 * mu * self.num[(u, v)] + mu * mu * den;
                total += den;
            }
        }
        let sigma2 = if total > 0.0 { (ss / total).max(VAR_FLOOR) } else { VAR_FLOOR };
        (psi, sigma2)
    }
}

/// Stable log-sum-exp.
pub(crate) fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}
