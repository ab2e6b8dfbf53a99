//! Exact log-likelihood and EM estimation by enumerating every row-label
//! configuration and running the chain recursion once per configuration.
//! Feasible only while `k1^r` stays below the enumeration cap; the naive
//! double enumeration over row and column configurations is also provided as
//! a test oracle.

use ndarray::{Array1, Array2, Array3, Array4};

use crate::chain::{chain_loglik, chain_posteriors, LogEmissionTable};
use crate::data::TwoWayArray;
use crate::error::{Error, Result};
use crate::fit::{logsumexp, run_em, FitConfig, FitResult, GaussAccum, Method};
use crate::model::{log_emission, ModelDims, ModelParams};
use crate::transition::{maximize_constrained_transitions, TransitionCriterion};

/// Default cap on `k1^r` for the exact path.
const DEFAULT_ENUM_CAP: u64 = 1 << 20;

/// Configurations with posterior weight below this threshold are skipped in
/// the posterior-mixing pass; the total mass ignored is at most
/// `cap * 1e-18`, far inside every stated tolerance.
const WEIGHT_EPS: f64 = 1e-18;

/// Lexicographic iterator over row-label configurations `(u_1, ..., u_r)`
/// with entries in `0..k1`.
pub struct RowConfigs {
    labels: Vec<usize>,
    k1: usize,
    exhausted: bool,
    started: bool,
}

impl RowConfigs {
    pub fn new(r: usize, k1: usize) -> Self {
        Self {
            labels: vec![0; r],
            k1,
            exhausted: r == 0 || k1 == 0,
            started: false,
        }
    }
}

impl Iterator for RowConfigs {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.exhausted {
            return None;
        }
        if !self.started {
            self.started = true;
            return Some(self.labels.clone());
        }
        if !advance(&mut self.labels, self.k1) {
            self.exhausted = true;
            return None;
        }
        Some(self.labels.clone())
    }
}

/// In-place lexicographic increment; returns false after the last word.
#[inline]
fn advance(labels: &mut [usize], k1: usize) -> bool {
    for d in (0..labels.len()).rev() {
        labels[d] += 1;
        if labels[d] < k1 {
            return true;
        }
        labels[d] = 0;
    }
    false
}

fn config_count(r: usize, k1: usize, cap: u64) -> Result<u64> {
    let mut n: u64 = 1;
    for _ in 0..r {
        n = match n.checked_mul(k1 as u64) {
            Some(m) if m <= cap => m,
            _ => {
                return Err(Error::EnumerationTooLarge {
                    required: (k1 as f64).powi(r as i32),
                    cap,
                })
            }
        };
    }
    Ok(n)
}

fn check_full_inputs(data: &TwoWayArray, params: &ModelParams, cap: u64) -> Result<()> {
    if !data.is_complete() {
        return Err(Error::MissingDataUnsupported);
    }
    let dims = ModelDims::new(data.nrows(), data.ncols(), params.k1(), params.k2())?;
    params.validate(&dims)?;
    config_count(dims.r, dims.k1, cap)?;
    Ok(())
}

/// Per-row, per-cluster log emission tables `B[i][u][(j, v)]`, flattened as
/// `i * k1 + u`.
fn row_emission_tables(data: &TwoWayArray, params: &ModelParams) -> Vec<Array2<f64>> {
    let (r, s) = (data.nrows(), data.ncols());
    let (k1, k2) = (params.k1(), params.k2());
    let mut tables = Vec::with_capacity(r * k1);
    for i in 0..r {
        for u in 0..k1 {
            let t = Array2::from_shape_fn((s, k2), |(j, v)| {
                log_emission(data.value(i, j), params.psi[(u, v)], params.sigma2)
            });
            tables.push(t);
        }
    }
    tables
}

fn config_emissions(
    tables: &[Array2<f64>],
    labels: &[usize],
    k1: usize,
    scratch: &mut Array2<f64>,
) {
    scratch.fill(0.0);
    for (i, &u) in labels.iter().enumerate() {
        *scratch += &tables[i * k1 + u];
    }
}

/// Per-configuration scores `log p(u) + log p(Y | u)` plus their total
/// `log p(Y)`.
fn config_scores(data: &TwoWayArray, params: &ModelParams) -> Result<(Vec<f64>, f64)> {
    let (r, s) = (data.nrows(), data.ncols());
    let (k1, k2) = (params.k1(), params.k2());
    let rho = params.stationary()?;
    let log_lambda: Vec<f64> = params.lambda.iter().map(|&l| l.ln()).collect();
    let tables = row_emission_tables(data, params);

    let mut scratch = Array2::zeros((s, k2));
    let mut labels = vec![0usize; r];
    let mut scores = Vec::with_capacity(config_count(r, k1, u64::MAX).unwrap_or(0) as usize);
    loop {
        config_emissions(&tables, &labels, k1, &mut scratch);
        let e = LogEmissionTable::new(scratch.clone())?;
        let prior: f64 = labels.iter().map(|&u| log_lambda[u]).sum();
        scores.push(prior + chain_loglik(&e, &params.pi, &rho)?);
        if !advance(&mut labels, k1) {
            break;
        }
    }
    let total = logsumexp(&scores);
    Ok((scores, total))
}

/// Exact log-likelihood `log sum_u p(u) p(Y | u)`. Requires complete data
/// and `k1^r` below the default cap.
pub fn full_loglik(data: &TwoWayArray, params: &ModelParams) -> Result<f64> {
    check_full_inputs(data, params, DEFAULT_ENUM_CAP)?;
    Ok(config_scores(data, params)?.1)
}

/// Posterior expectations of the exact model.
#[derive(Clone, Debug)]
pub struct FullPosteriors {
    /// `p(U_i = u | Y)`, `r x k1`.
    pub w_hat: Array2<f64>,
    /// `p(V_1 = v | Y)`, length `k2`.
    pub z1_hat: Array1<f64>,
    /// `p(V_{j-1} = vb, V_j = v | Y)`, `(s-1) x k2 x k2`.
    pub zpair_hat: Array3<f64>,
    /// `p(U_i = u, V_j = v | Y)`, `r x s x k1 x k2`.
    pub wz_hat: Array4<f64>,
    /// `log p(Y)` at the supplied parameters.
    pub loglik: f64,
}

/// Exact E-step: mixes per-configuration chain posteriors with the
/// configuration weights `p(Y | u) p(u) / p(Y)`.
pub fn full_e_step(data: &TwoWayArray, params: &ModelParams) -> Result<FullPosteriors> {
    check_full_inputs(data, params, DEFAULT_ENUM_CAP)?;
    let (r, s) = (data.nrows(), data.ncols());
    let (k1, k2) = (params.k1(), params.k2());
    let rho = params.stationary()?;
    let tables = row_emission_tables(data, params);
    let (scores, total) = config_scores(data, params)?;

    let mut w_hat = Array2::zeros((r, k1));
    let mut z1_hat = Array1::zeros(k2);
    let mut zpair_hat = Array3::zeros((s.saturating_sub(1), k2, k2));
    let mut wz_hat = Array4::zeros((r, s, k1, k2));

    let mut scratch = Array2::zeros((s, k2));
    let mut labels = vec![0usize; r];
    let mut idx = 0;
    loop {
        let weight = (scores[idx] - total).exp();
        if weight > WEIGHT_EPS {
            config_emissions(&tables, &labels, k1, &mut scratch);
            let e = LogEmissionTable::new(scratch.clone())?;
            let post = chain_posteriors(&e, &params.pi, &rho)?;
            for (i, &u) in labels.iter().enumerate() {
                w_hat[(i, u)] += weight;
                for j in 0..s {
                    for v in 0..k2 {
                        wz_hat[(i, j, u, v)] += weight * post.gamma[(j, v)];
                    }
                }
            }
            for v in 0..k2 {
                z1_hat[v] += weight * post.gamma[(0, v)];
            }
            zpair_hat.scaled_add(weight, &post.xi);
        }
        idx += 1;
        if !advance(&mut labels, k1) {
            break;
        }
    }

    Ok(FullPosteriors {
        w_hat,
        z1_hat,
        zpair_hat,
        wz_hat,
        loglik: total,
    })
}

/// Naive oracle: the direct double sum over all `(u, v)` configurations,
/// capped at one million terms. Missing cells simply contribute no emission
/// factor.
pub fn brute_force_loglik(data: &TwoWayArray, params: &ModelParams) -> Result<f64> {
    let (r, s) = (data.nrows(), data.ncols());
    let (k1, k2) = (params.k1(), params.k2());
    let dims = ModelDims::new(r, s, k1, k2)?;
    params.validate(&dims)?;
    let u_count = config_count(r, k1, 1_000_000)?;
    let v_count = config_count(s, k2, 1_000_000)?;
    if u_count.saturating_mul(v_count) > 1_000_000 {
        return Err(Error::EnumerationTooLarge {
            required: u_count as f64 * v_count as f64,
            cap: 1_000_000,
        });
    }

    let rho = params.stationary()?;
    let mut terms = Vec::with_capacity((u_count * v_count) as usize);
    let mut u_labels = vec![0usize; r];
    loop {
        let lambda_part: f64 = u_labels.iter().map(|&u| params.lambda[u].ln()).sum();
        let mut v_labels = vec![0usize; s];
        loop {
            let mut term = lambda_part + rho[v_labels[0]].ln();
            for j in 1..s {
                term += params.pi[(v_labels[j - 1], v_labels[j])].ln();
            }
            for i in 0..r {
                for j in 0..s {
                    if data.observed(i, j) {
                        term += log_emission(
                            data.value(i, j),
                            params.psi[(u_labels[i], v_labels[j])],
                            params.sigma2,
                        );
                    }
                }
            }
            terms.push(term);
            if !advance(&mut v_labels, k2) {
                break;
            }
        }
        if !advance(&mut u_labels, k1) {
            break;
        }
    }
    Ok(logsumexp(&terms))
}

/// EM estimation of the exact likelihood.
pub fn fit_full(data: &TwoWayArray, dims: &ModelDims, config: &FitConfig) -> Result<FitResult> {
    if data.nrows() != dims.r || data.ncols() != dims.s {
        return Err(Error::DimensionMismatch(format!(
            "data are {}x{}, dims say {}x{}",
            data.nrows(),
            data.ncols(),
            dims.r,
            dims.s
        )));
    }
    if !data.is_complete() {
        return Err(Error::MissingDataUnsupported);
    }
    config_count(dims.r, dims.k1, config.enum_cap)?;

    let (r, s) = (dims.r, dims.s);
    let (k1, k2) = (dims.k1, dims.k2);

    run_em(data, dims, config, Method::Full, |data, params| {
        let rho = params.stationary()?;
        let tables = row_emission_tables(data, params);
        let (scores, total) = config_scores(data, params)?;

        // Streamed accumulation: nothing of size r*s*k1*k2 is materialized.
        let mut lambda_num = vec![0.0; k1];
        let mut a = Array1::zeros(k2);
        let mut c = Array2::zeros((k2, k2));
        let mut gauss = GaussAccum::new(k1, k2);

        let mut scratch = Array2::zeros((s, k2));
        let mut labels = vec![0usize; r];
        let mut idx = 0;
        loop {
            let weight = (scores[idx] - total).exp();
            if weight > WEIGHT_EPS {
                config_emissions(&tables, &labels, k1, &mut scratch);
                let e = LogEmissionTable::new(scratch.clone())?;
                let post = chain_posteriors(&e, &params.pi, &rho)?;
                for v in 0..k2 {
                    a[v] += weight * post.gamma[(0, v)];
                }
                for j in 1..s {
                    for vb in 0..k2 {
                        for v in 0..k2 {
                            c[(vb, v)] += weight * post.xi[(j - 1, vb, v)];
                        }
                    }
                }
                for (i, &u) in labels.iter().enumerate() {
                    lambda_num[u] += weight;
                    for v in 0..k2 {
                        let mut g = 0.0;
                        let mut gy = 0.0;
                        let mut gy2 = 0.0;
                        for j in 0..s {
                            let w = post.gamma[(j, v)];
                            let y = data.value(i, j);
                            g += w;
                            gy += w * y;
                            gy2 += w * y * y;
                        }
                        gauss.den[(u, v)] += weight * g;
                        gauss.num[(u, v)] += weight * gy;
                        gauss.num2[(u, v)] += weight * gy2;
                    }
                }
            }
            idx += 1;
            if !advance(&mut labels, k1) {
                break;
            }
        }

        let lambda = Array1::from_shape_fn(k1, |u| lambda_num[u] / r as f64);
        let crit = TransitionCriterion::new(a, c)?;
        let pi = maximize_constrained_transitions(&crit, &params.pi)?;
        let (psi, sigma2) = gauss.finish(&params.psi);
        let mut next = ModelParams::new(lambda, pi, psi, sigma2);
        next.apply_floors();
        Ok((total, next))
    })
}
