//! Column composite likelihood and the combined row-column objective.
//!
//! The column term treats every column as an independent draw from the
//! stationary state distribution, with the row latent variables replaced by
//! independent per-cell mixture labels. Adding it to the row composite
//! log-likelihood sharpens the estimation of means and variance while its
//! stationary-weight term feeds back into the transition update.

use ndarray::{Array1, Array2, Array3, Array4};

use crate::data::TwoWayArray;
use crate::error::{Error, Result};
use crate::fit::{logsumexp, run_em, FitConfig, FitResult, GaussAccum, Method};
use crate::model::{log_emission, ModelDims, ModelParams};
use crate::row::{row_e_step_impl, row_loglik_impl};
use crate::transition::{maximize_constrained_transitions, TransitionCriterion};

/// E-step expectations of the column composite model.
#[derive(Clone, Debug)]
pub struct ColumnClPosteriors {
    /// `p(V_j = v | y_j)`, `s x k2`.
    pub z2_hat: Array2<f64>,
    /// `p(U_ij = u | y_j)`, `r x s x k1`. Cells with no observation carry
    /// the prior `lambda`.
    pub w2_hat: Array3<f64>,
    /// Joint `p(U_ij = u, V_j = v | y_j)`, `r x s x k1 x k2`.
    pub wz2_hat: Array4<f64>,
    /// Column composite log-likelihood at the supplied parameters.
    pub loglik: f64,
}

fn check_dims(data: &TwoWayArray, params: &ModelParams) -> Result<ModelDims> {
    let dims = ModelDims::new(data.nrows(), data.ncols(), params.k1(), params.k2())?;
    params.validate(&dims)?;
    Ok(dims)
}

pub(crate) fn column_loglik_impl(
    data: &TwoWayArray,
    params: &ModelParams,
    lenient: bool,
) -> Result<f64> {
    let dims = check_dims(data, params)?;
    if !lenient {
        data.require_nonempty_cols()?;
    }
    let (r, s, k1, k2) = (dims.r, dims.s, dims.k1, dims.k2);
    let rho = params.stationary()?;
    let log_lambda: Vec<f64> = params.lambda.iter().map(|&l| l.ln()).collect();

    let mut total = 0.0;
    let mut lp = vec![0.0; k2];
    let mut mix = vec![0.0; k1];
    for j in 0..s {
        for v in 0..k2 {
            let mut acc = rho[v].ln();
            for i in 0..r {
                if data.observed(i, j) {
                    let y = data.value(i, j);
                    for (u, m) in mix.iter_mut().enumerate() {
                        *m = log_lambda[u] + log_emission(y, params.psi[(u, v)], params.sigma2);
                    }
                    acc += logsumexp(&mix);
                }
            }
            lp[v] = acc;
        }
        total += logsumexp(&lp);
    }
    Ok(total)
}

/// Column composite log-likelihood: the sum over columns of the log marginal
/// density of each column under the stationary mixture.
pub fn column_loglik(data: &TwoWayArray, params: &ModelParams) -> Result<f64> {
    column_loglik_impl(data, params, false)
}

pub(crate) fn rowcol_objective_impl(
    data: &TwoWayArray,
    params: &ModelParams,
    lenient: bool,
) -> Result<f64> {
    Ok(row_loglik_impl(data, params, lenient)? + column_loglik_impl(data, params, lenient)?)
}

/// The combined objective: row composite plus column composite, unweighted.
pub fn rowcol_objective(data: &TwoWayArray, params: &ModelParams) -> Result<f64> {
    rowcol_objective_impl(data, params, false)
}

pub(crate) fn column_e_step_impl(
    data: &TwoWayArray,
    params: &ModelParams,
    lenient: bool,
) -> Result<ColumnClPosteriors> {
    let dims = check_dims(data, params)?;
    if !lenient {
        data.require_nonempty_cols()?;
    }
    let (r, s, k1, k2) = (dims.r, dims.s, dims.k1, dims.k2);
    let rho = params.stationary()?;
    let log_lambda: Vec<f64> = params.lambda.iter().map(|&l| l.ln()).collect();

    let mut z2_hat = Array2::zeros((s, k2));
    let mut w2_hat = Array3::zeros((r, s, k1));
    let mut wz2_hat = Array4::zeros((r, s, k1, k2));
    let mut loglik = 0.0;

    // Per-cell log mixture normalizers log p(y_ij | v).
    let mut logm = Array2::zeros((r, k2));
    let mut lp = vec![0.0; k2];
    let mut mix = vec![0.0; k1];

    for j in 0..s {
        for v in 0..k2 {
            lp[v] = rho[v].ln();
        }
        for i in 0..r {
            if !data.observed(i, j) {
                continue;
            }
            let y = data.value(i, j);
            for v in 0..k2 {
                for (u, m) in mix.iter_mut().enumerate() {
                    *m = log_lambda[u] + log_emission(y, params.psi[(u, v)], params.sigma2);
                }
                let m = logsumexp(&mix);
                logm[(i, v)] = m;
                lp[v] += m;
            }
        }
        let col_ll = logsumexp(&lp);
        loglik += col_ll;
        for v in 0..k2 {
            z2_hat[(j, v)] = (lp[v] - col_ll).exp();
        }
        for i in 0..r {
            if data.observed(i, j) {
                let y = data.value(i, j);
                for v in 0..k2 {
                    let zv = z2_hat[(j, v)];
                    for u in 0..k1 {
                        let gl =
                            log_lambda[u] + log_emission(y, params.psi[(u, v)], params.sigma2);
                        let resp = (gl - logm[(i, v)]).exp() * zv;
                        wz2_hat[(i, j, u, v)] = resp;
                        w2_hat[(i, j, u)] += resp;
                    }
                }
            } else {
                // No observation: the cell label posterior is its prior.
                for u in 0..k1 {
                    w2_hat[(i, j, u)] = params.lambda[u];
                    for v in 0..k2 {
                        wz2_hat[(i, j, u, v)] = params.lambda[u] * z2_hat[(j, v)];
                    }
                }
            }
        }
    }

    Ok(ColumnClPosteriors {
        z2_hat,
        w2_hat,
        wz2_hat,
        loglik,
    })
}

/// E-step of the column composite model.
pub fn column_e_step(data: &TwoWayArray, params: &ModelParams) -> Result<ColumnClPosteriors> {
    column_e_step_impl(data, params, false)
}

pub(crate) fn fit_rowcol_cl_impl(
    data: &TwoWayArray,
    dims: &ModelDims,
    config: &FitConfig,
    lenient: bool,
) -> Result<FitResult> {
    if data.nrows() != dims.r || data.ncols() != dims.s {
        return Err(Error::DimensionMismatch(format!(
            "data are {}x{}, dims say {}x{}",
            data.nrows(),
            data.ncols(),
            dims.r,
            dims.s
        )));
    }
    if !lenient {
        data.require_nonempty_rows()?;
        data.require_nonempty_cols()?;
    }
    let (r, s, k1, k2) = (dims.r, dims.s, dims.k1, dims.k2);
    let n_obs = data.n_observed() as f64;

    run_em(data, dims, config, Method::RowColCl, |data, params| {
        let rpost = row_e_step_impl(data, params, true)?;
        let cpost = column_e_step_impl(data, params, true)?;
        let objective = rpost.loglik + cpost.loglik;

        // Mass probabilities: row posteriors plus per-observed-cell
        // posteriors, normalized by r + #observed.
        let mut lambda = Array1::zeros(k1);
        for i in 0..r {
            for u in 0..k1 {
                lambda[u] += rpost.w1_hat[(i, u)];
            }
        }
        for i in 0..r {
            for j in 0..s {
                if data.observed(i, j) {
                    for u in 0..k1 {
                        lambda[u] += cpost.w2_hat[(i, j, u)];
                    }
                }
            }
        }
        lambda.mapv_inplace(|x| x / (r as f64 + n_obs));

        // Transition criterion: the column term has independent columns, so
        // it contributes stationary weight only; pairwise counts come from
        // the row chains alone.
        let mut a = Array1::zeros(k2);
        let mut c = Array2::zeros((k2, k2));
        for i in 0..r {
            for v in 0..k2 {
                a[v] += rpost.z1_marg[(i, 0, v)];
            }
            for j in 0..s - 1 {
                for vb in 0..k2 {
                    for v in 0..k2 {
                        c[(vb, v)] += rpost.z1_pair[(i, j, vb, v)];
                    }
                }
            }
        }
        for j in 0..s {
            for v in 0..k2 {
                a[v] += cpost.z2_hat[(j, v)];
            }
        }

        let mut gauss = GaussAccum::new(k1, k2);
        for i in 0..r {
            for j in 0..s {
                if !data.observed(i, j) {
                    continue;
                }
                let y = data.value(i, j);
                for u in 0..k1 {
                    for v in 0..k2 {
                        let w = rpost.wz1_hat[(i, j, u, v)] + cpost.wz2_hat[(i, j, u, v)];
                        gauss.add(u, v, w, y);
                    }
                }
            }
        }

        let crit = TransitionCriterion::new(a, c)?;
        let pi = maximize_constrained_transitions(&crit, &params.pi)?;
        let (psi, sigma2) = gauss.finish(&params.psi);
        let mut next = ModelParams::new(lambda, pi, psi, sigma2);
        next.apply_floors();
        Ok((objective, next))
    })
}

/// EM estimation of the combined row-column composite likelihood. This is
/// the recommended estimator.
pub fn fit_rowcol_cl(
    data: &TwoWayArray,
    dims: &ModelDims,
    config: &FitConfig,
) -> Result<FitResult> {
    fit_rowcol_cl_impl(data, dims, config, false)
}
