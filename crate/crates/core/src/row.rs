//! Row composite likelihood: each data row is treated as an independent
//! stationary hidden Markov chain mixed over the row latent state. Missing
//! cells contribute no emission factor, which is exactly the MCAR
//! marginalization the cross-validation scheme relies on.

use ndarray::{Array1, Array2, Array3, Array4};

use crate::chain::{chain_loglik, chain_posteriors, LogEmissionTable};
use crate::data::TwoWayArray;
use crate::error::{Error, Result};
use crate::fit::{logsumexp, run_em, FitConfig, FitResult, GaussAccum, Method};
use crate::model::{log_emission, ModelDims, ModelParams};
use crate::transition::{maximize_constrained_transitions, TransitionCriterion};

/// E-step expectations of the row composite model.
#[derive(Clone, Debug)]
pub struct RowClPosteriors {
    /// `p(U_i = u | y_i)`, `r x k1`.
    pub w1_hat: Array2<f64>,
    /// Smoothed per-row state marginals `p(V_ij = v | y_i)`, `r x s x k2`.
    pub z1_marg: Array3<f64>,
    /// Per-row pairwise posteriors, `r x (s-1) x k2 x k2`.
    pub z1_pair: Array4<f64>,
    /// Joint posteriors `p(U_i = u, V_ij = v | y_i)`, `r x s x k1 x k2`.
    pub wz1_hat: Array4<f64>,
    /// Row composite log-likelihood at the supplied parameters.
    pub loglik: f64,
}

fn check_dims(data: &TwoWayArray, params: &ModelParams) -> Result<ModelDims> {
    let dims = ModelDims::new(data.nrows(), data.ncols(), params.k1(), params.k2())?;
    params.validate(&dims)?;
    Ok(dims)
}

/// Log emission table of row `i` under row cluster `u`; missing cells get a
/// zero log contribution (emission factor one).
fn row_emissions(
    data: &TwoWayArray,
    params: &ModelParams,
    i: usize,
    u: usize,
) -> Result<LogEmissionTable> {
    LogEmissionTable::from_fn(data.ncols(), params.k2(), |j, v| {
        if data.observed(i, j) {
            log_emission(data.value(i, j), params.psi[(u, v)], params.sigma2)
        } else {
            0.0
        }
    })
}

pub(crate) fn row_loglik_impl(
    data: &TwoWayArray,
    params: &ModelParams,
    lenient: bool,
) -> Result<f64> {
    check_dims(data, params)?;
    if !lenient {
        data.require_nonempty_rows()?;
    }
    let rho = params.stationary()?;
    let log_lambda: Vec<f64> = params.lambda.iter().map(|&l| l.ln()).collect();
    let mut total = 0.0;
    let mut terms = vec![0.0; params.k1()];
    for i in 0..data.nrows() {
        for (u, t) in terms.iter_mut().enumerate() {
            let e = row_emissions(data, params, i, u)?;
            *t = log_lambda[u] + chain_loglik(&e, &params.pi, &rho)?;
        }
        total += logsumexp(&terms);
    }
    Ok(total)
}

/// Row composite log-likelihood: the sum over rows of the log marginal
/// density of each row under the mixed stationary chain.
pub fn row_loglik(data: &TwoWayArray, params: &ModelParams) -> Result<f64> {
    row_loglik_impl(data, params, false)
}

pub(crate) fn row_e_step_impl(
    data: &TwoWayArray,
    params: &ModelParams,
    lenient: bool,
) -> Result<RowClPosteriors> {
    let dims = check_dims(data, params)?;
    if !lenient {
        data.require_nonempty_rows()?;
    }
    let (r, s, k1, k2) = (dims.r, dims.s, dims.k1, dims.k2);
    let rho = params.stationary()?;
    let log_lambda: Vec<f64> = params.lambda.iter().map(|&l| l.ln()).collect();

    let mut w1_hat = Array2::zeros((r, k1));
    let mut z1_marg = Array3::zeros((r, s, k2));
    let mut z1_pair = Array4::zeros((r, s.saturating_sub(1), k2, k2));
    let mut wz1_hat = Array4::zeros((r, s, k1, k2));
    let mut loglik = 0.0;

    let mut chains = Vec::with_capacity(k1);
    let mut scores = vec![0.0; k1];
    for i in 0..r {
        chains.clear();
        for u in 0..k1 {
            let e = row_emissions(data, params, i, u)?;
            let post = chain_posteriors(&e, &params.pi, &rho)?;
            scores[u] = log_lambda[u] + post.loglik;
            chains.push(post);
        }
        let row_ll = logsumexp(&scores);
        loglik += row_ll;
        for u in 0..k1 {
            let w = (scores[u] - row_ll).exp();
            w1_hat[(i, u)] = w;
            let post = &chains[u];
            for j in 0..s {
                for v in 0..k2 {
                    let g = post.gamma[(j, v)];
                    wz1_hat[(i, j, u, v)] = w * g;
                    z1_marg[(i, j, v)] += w * g;
                }
            }
            for j in 0..s.saturating_sub(1) {
                for vb in 0..k2 {
                    for v in 0..k2 {
                        z1_pair[(i, j, vb, v)] += w * post.xi[(j, vb, v)];
                    }
                }
            }
        }
    }

    Ok(RowClPosteriors {
        w1_hat,
        z1_marg,
        z1_pair,
        wz1_hat,
        loglik,
    })
}

/// E-step of the row composite model: cluster posteriors per row and the
/// per-row chain posteriors mixed over clusters.
pub fn row_e_step(data: &TwoWayArray, params: &ModelParams) -> Result<RowClPosteriors> {
    row_e_step_impl(data, params, false)
}

pub(crate) fn fit_row_cl_impl(
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
    }
    let (r, s, k1, k2) = (dims.r, dims.s, dims.k1, dims.k2);

    run_em(data, dims, config, Method::RowCl, |data, params| {
        let post = row_e_step_impl(data, params, true)?;

        let mut lambda = Array1::zeros(k1);
        for i in 0..r {
            for u in 0..k1 {
                lambda[u] += post.w1_hat[(i, u)] / r as f64;
            }
        }

        let mut a = Array1::zeros(k2);
        let mut c = Array2::zeros((k2, k2));
        for i in 0..r {
            for v in 0..k2 {
                a[v] += post.z1_marg[(i, 0, v)];
            }
            for j in 0..s - 1 {
                for vb in 0..k2 {
                    for v in 0..k2 {
                        c[(vb, v)] += post.z1_pair[(i, j, vb, v)];
                    }
                }
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
                        gauss.add(u, v, post.wz1_hat[(i, j, u, v)], y);
                    }
                }
            }
        }

        let crit = TransitionCriterion::new(a, c)?;
        let pi = maximize_constrained_transitions(&crit, &params.pi)?;
        let (psi, sigma2) = gauss.finish(&params.psi);
        let mut next = ModelParams::new(lambda, pi, psi, sigma2);
        next.apply_floors();
        Ok((post.loglik, next))
    })
}

/// EM estimation of the row composite likelihood.
pub fn fit_row_cl(data: &TwoWayArray, dims: &ModelDims, config: &FitConfig) -> Result<FitResult> {
    fit_row_cl_impl(data, dims, config, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::full::full_loglik;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_params(k1: usize, k2: usize, rng: &mut ChaCha8Rng) -> ModelParams {
        let mut lambda = Array1::from_shape_fn(k1, |_| rng.gen_range(0.2..1.0));
        let t = lambda.sum();
        lambda.mapv_inplace(|x| x / t);
        let mut pi = Array2::from_shape_fn((k2, k2), |_| rng.gen_range(0.2..1.0));
        for mut row in pi.rows_mut() {
            let t = row.sum();
            row.mapv_inplace(|x| x / t);
        }
        let psi = Array2::from_shape_fn((k1, k2), |_| rng.gen_range(-2.0..2.0));
        ModelParams::new(lambda, pi, psi, rng.gen_range(0.3..1.5))
    }

    #[test]
    fn trivial_model_sums_observed_log_densities() {
        let data = TwoWayArray::with_mask(
            array![[1.0, 2.0], [0.0, -1.0]],
            array![[true, false], [true, true]],
        )
        .unwrap();
        let params = ModelParams::new(array![1.0], array![[1.0]], array![[0.5]], 0.9);
        let expect = log_emission(1.0, 0.5, 0.9)
            + log_emission(0.0, 0.5, 0.9)
            + log_emission(-1.0, 0.5, 0.9);
        assert_abs_diff_eq!(row_loglik(&data, &params).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn single_observed_cell_is_a_double_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let params = random_params(2, 2, &mut rng);
        let rho = params.stationary().unwrap();
        let y = 0.7;
        let data = TwoWayArray::with_mask(
            array![[y, 0.0, 0.0]],
            array![[true, false, false]],
        )
        .unwrap();
        // With one observed cell the chain marginalizes to the stationary
        // mixture over states.
        let mut expect = 0.0f64;
        let mut terms = Vec::new();
        for u in 0..2 {
            let inner: f64 = (0..2)
                .map(|v| rho[v] * log_emission(y, params.psi[(u, v)], params.sigma2).exp())
                .sum();
            terms.push(params.lambda[u].ln() + inner.ln());
        }
        expect += logsumexp(&terms);
        assert_abs_diff_eq!(row_loglik(&data, &params).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn one_row_matches_full_likelihood() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let params = random_params(2, 2, &mut rng);
            let data = TwoWayArray::complete(Array2::from_shape_fn((1, 5), |_| {
                rng.gen_range(-2.0..2.0)
            }))
            .unwrap();
            assert_abs_diff_eq!(
                row_loglik(&data, &params).unwrap(),
                full_loglik(&data, &params).unwrap(),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn empty_row_is_an_error_on_the_strict_path() {
        let data = TwoWayArray::with_mask(
            array![[1.0, 2.0], [0.0, 0.0]],
            array![[true, true], [false, false]],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = random_params(2, 2, &mut rng);
        assert!(matches!(
            row_loglik(&data, &params),
            Err(Error::EmptyRow(2))
        ));
        // The lenient path marginalizes the row out: its contribution is 0.
        let lenient = row_loglik_impl(&data, &params, true).unwrap();
        let only_first = TwoWayArray::with_mask(
            array![[1.0, 2.0]],
            array![[true, true]],
        )
        .unwrap();
        assert_abs_diff_eq!(
            lenient,
            row_loglik(&only_first, &params).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn e_step_trivial_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let params = random_params(1, 2, &mut rng);
        let data = TwoWayArray::complete(Array2::from_shape_fn((2, 4), |_| {
            rng.gen_range(-1.0..1.0)
        }))
        .unwrap();
        let post = row_e_step(&data, &params).unwrap();
        assert!(post.w1_hat.iter().all(|&w| (w - 1.0).abs() < 1e-12));
        let rho = params.stationary().unwrap();
        for i in 0..2 {
            let e = row_emissions(&data, &params, i, 0).unwrap();
            let chain = chain_posteriors(&e, &params.pi, &rho).unwrap();
            for j in 0..4 {
                for v in 0..2 {
                    assert_abs_diff_eq!(
                        post.z1_marg[(i, j, v)],
                        chain.gamma[(j, v)],
                        epsilon = 1e-12
                    );
                }
            }
        }
    }

    #[test]
    fn e_step_identical_clusters_return_the_prior() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut params = random_params(2, 2, &mut rng);
        for v in 0..2 {
            params.psi[(1, v)] = params.psi[(0, v)];
        }
        let data = TwoWayArray::complete(Array2::from_shape_fn((3, 4), |_| {
            rng.gen_range(-1.0..1.0)
        }))
        .unwrap();
        let post = row_e_step(&data, &params).unwrap();
        for i in 0..3 {
            for u in 0..2 {
                assert_abs_diff_eq!(post.w1_hat[(i, u)], params.lambda[u], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn e_step_matches_joint_enumeration() {
        // One row, s = 3, k1 = k2 = 2: enumerate all (u, v-path) weights.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..10 {
            let params = random_params(2, 2, &mut rng);
            let rho = params.stationary().unwrap();
            let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let data = TwoWayArray::complete(
                Array2::from_shape_vec((1, 3), y.clone()).unwrap(),
            )
            .unwrap();

            let mut total = 0.0;
            let mut w_u = [0.0; 2];
            let mut marg = Array2::<f64>::zeros((3, 2));
            let mut pair = Array3::<f64>::zeros((2, 2, 2));
            let mut joint = Array2::<f64>::zeros((2, 2)); // (u, v at j=1)
            for u in 0..2 {
                for path in 0..8usize {
                    let vs = [path % 2, (path / 2) % 2, (path / 4) % 2];
                    let mut w = params.lambda[u] * rho[vs[0]];
                    for j in 1..3 {
                        w *= params.pi[(vs[j - 1], vs[j])];
                    }
                    for j in 0..3 {
                        w *= log_emission(y[j], params.psi[(u, vs[j])], params.sigma2).exp();
                    }
                    total += w;
                    w_u[u] += w;
                    for j in 0..3 {
                        marg[(j, vs[j])] += w;
                    }
                    for j in 1..3 {
                        pair[(j - 1, vs[j - 1], vs[j])] += w;
                    }
                    joint[(u, vs[1])] += w;
                }
            }

            let post = row_e_step(&data, &params).unwrap();
            assert_abs_diff_eq!(post.loglik, total.ln(), epsilon = 1e-10);
            for u in 0..2 {
                assert_abs_diff_eq!(post.w1_hat[(0, u)], w_u[u] / total, epsilon = 1e-10);
            }
            for j in 0..3 {
                for v in 0..2 {
                    assert_abs_diff_eq!(
                        post.z1_marg[(0, j, v)],
                        marg[(j, v)] / total,
                        epsilon = 1e-10
                    );
                }
            }
            for j in 0..2 {
                for vb in 0..2 {
                    for v in 0..2 {
                        assert_abs_diff_eq!(
                            post.z1_pair[(0, j, vb, v)],
                            pair[(j, vb, v)] / total,
                            epsilon = 1e-10
                        );
                    }
                }
            }
            for u in 0..2 {
                for v in 0..2 {
                    assert_abs_diff_eq!(
                        post.wz1_hat[(0, 1, u, v)],
                        joint[(u, v)] / total,
                        epsilon = 1e-10
                    );
                }
            }
        }
    }

    #[test]
    fn e_step_marginalization_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let params = random_params(2, 3, &mut rng);
        let mut mask = Array2::from_elem((3, 5), true);
        mask[(1, 2)] = false;
        mask[(2, 0)] = false;
        let data = TwoWayArray::with_mask(
            Array2::from_shape_fn((3, 5), |_| rng.gen_range(-2.0..2.0)),
            mask,
        )
        .unwrap();
        let post = row_e_step(&data, &params).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(post.w1_hat.row(i).sum(), 1.0, epsilon = 1e-10);
            for j in 0..5 {
                let mut slab = 0.0;
                for v in 0..3 {
                    let mut over_u = 0.0;
                    for u in 0..2 {
                        over_u += post.wz1_hat[(i, j, u, v)];
                        slab += post.wz1_hat[(i, j, u, v)];
                    }
                    assert_abs_diff_eq!(over_u, post.z1_marg[(i, j, v)], epsilon = 1e-10);
                }
                assert_abs_diff_eq!(slab, 1.0, epsilon = 1e-10);
            }
            for j in 0..4 {
                let mut pair_sum = 0.0;
                for vb in 0..3 {
                    for v in 0..3 {
                        pair_sum += post.z1_pair[(i, j, vb, v)];
                    }
                }
                assert_abs_diff_eq!(pair_sum, 1.0, epsilon = 1e-10);
            }
        }
    }
}
