//! Log-space forward/backward recursions for a stationary hidden Markov chain
//! driven by an arbitrary per-column, per-state log-emission table.
//!
//! The implementation uses scaled (normalized) forward variables rather than
//! per-step log-sum-exp: each column's log emissions are shifted by their row
//! maximum, the forward vector is renormalized, and the log normalizers are
//! accumulated into the log-likelihood. The likelihood-only path runs just
//! the forward pass; posteriors add the backward pass and materialize the
//! pairwise terms.

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};

/// Per-column, per-state log emission densities (`s x k2`). Entries must be
/// finite: callers marginalize missing cells by simply adding no contribution
/// for them, never by inserting `-inf`.
#[derive(Clone, Debug)]
pub struct LogEmissionTable {
    values: Array2<f64>,
}

impl LogEmissionTable {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::DimensionMismatch(
                "emission table must be nonempty".into(),
            ));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("log-emission entry".into()));
        }
        Ok(Self { values })
    }

    pub fn from_fn(s: usize, k2: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        Self::new(Array2::from_shape_fn((s, k2), |(j, v)| f(j, v)))
    }

    /// Number of columns (chain length).
    pub fn s(&self) -> usize {
        self.values.nrows()
    }

    /// Number of states.
    pub fn k2(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }
}

/// Smoothed posteriors of the column chain.
#[derive(Clone, Debug)]
pub struct ChainPosteriors {
    /// `gamma[(j, v)] = p(V_j = v | data)`, `s x k2`.
    pub gamma: Array2<f64>,
    /// `xi[(j-1, vb, v)] = p(V_{j-1} = vb, V_j = v | data)`, `(s-1) x k2 x k2`.
    pub xi: Array3<f64>,
    /// Log-likelihood of the emission table under the chain.
    pub loglik: f64,
}

/// Result of the scaled forward pass, shared by both public entry points.
struct Forward {
    /// Normalized forward variables `p(V_j = v | data up to j)`.
    alpha: Array2<f64>,
    /// Shifted emissions `exp(E[j, v] - max_v E[j, v])`.
    shifted: Array2<f64>,
    /// Per-column normalizers of the shifted recursion.
    norms: Vec<f64>,
    loglik: f64,
}

fn check_dims(emissions: &LogEmissionTable, pi: &Array2<f64>, rho: &Array1<f64>) -> Result<()> {
    let k2 = emissions.k2();
    if pi.nrows() != k2 || pi.ncols() != k2 || rho.len() != k2 {
        return Err(Error::DimensionMismatch(format!(
            "emissions have {} states, pi is {}x{}, rho has length {}",
            k2,
            pi.nrows(),
            pi.ncols(),
            rho.len()
        )));
    }
    Ok(())
}

fn forward(emissions: &LogEmissionTable, pi: &Array2<f64>, rho: &Array1<f64>) -> Result<Forward> {
    let (s, k2) = (emissions.s(), emissions.k2());
    let e = emissions.values();
    let mut alpha = Array2::zeros((s, k2));
    let mut shifted = Array2::zeros((s, k2));
    let mut norms = vec![0.0; s];
    let mut loglik = 0.0;
    let mut pred = vec![0.0; k2];

    for j in 0..s {
        let mut shift = f64::NEG_INFINITY;
        for v in 0..k2 {
            shift = shift.max(e[(j, v)]);
        }
        for v in 0..k2 {
            shifted[(j, v)] = (e[(j, v)] - shift).exp();
        }
        if j == 0 {
            for v in 0..k2 {
                pred[v] = rho[v];
            }
        } else {
            for v in 0..k2 {
                let mut acc = 0.0;
                for vb in 0..k2 {
                    acc += alpha[(j - 1, vb)] * pi[(vb, v)];
                }
                pred[v] = acc;
            }
        }
        let mut c = 0.0;
        for v in 0..k2 {
            let a = pred[v] * shifted[(j, v)];
            alpha[(j, v)] = a;
            c += a;
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::NonFinite(format!(
                "forward recursion underflowed at column {}",
                j + 1
            )));
        }
        for v in 0..k2 {
            alpha[(j, v)] /= c;
        }
        norms[j] = c;
        loglik += c.ln() + shift;
    }
    Ok(Forward {
        alpha,
        shifted,
        norms,
        loglik,
    })
}

/// Log-likelihood of the emission table under the stationary chain
/// `(rho, pi)`. `rho` is taken as given so callers can share one stationary
/// solve across many emission tables.
pub fn chain_loglik(
    emissions: &LogEmissionTable,
    pi: &Array2<f64>,
    rho: &Array1<f64>,
) -> Result<f64> {
    check_dims(emissions, pi, rho)?;
    Ok(forward(emissions, pi, rho)?.loglik)
}

/// Smoothed marginal and pairwise posteriors plus the log-likelihood. The
/// log-likelihood comes from the same forward pass as [`chain_loglik`] and is
/// bit-identical to it.
pub fn chain_posteriors(
    emissions: &LogEmissionTable,
    pi: &Array2<f64>,
    rho: &Array1<f64>,
) -> Result<ChainPosteriors> {
    check_dims(emissions, pi, rho)?;
    let (s, k2) = (emissions.s(), emissions.k2());
    let fwd = forward(emissions, pi, rho)?;

    // Scaled backward pass; beta[(s-1, v)] = 1.
    let mut beta = Array2::zeros((s, k2));
    for v in 0..k2 {
        beta[(s - 1, v)] = 1.0;
    }
    for j in (0..s - 1).rev() {
        let c_next = fwd.norms[j + 1];
        for vb in 0..k2 {
            let mut acc = 0.0;
            for v in 0..k2 {
                acc += pi[(vb, v)] * fwd.shifted[(j + 1, v)] * beta[(j + 1, v)];
            }
            beta[(j, vb)] = acc / c_next;
        }
    }

    let mut gamma = Array2::zeros((s, k2));
    for j in 0..s {
        for v in 0..k2 {
            gamma[(j, v)] = fwd.alpha[(j, v)] * beta[(j, v)];
        }
    }

    let mut xi = Array3::zeros((s.saturating_sub(1), k2, k2));
    for j in 1..s {
        let c = fwd.norms[j];
        for vb in 0..k2 {
            let a = fwd.alpha[(j - 1, vb)];
            for v in 0..k2 {
                xi[(j - 1, vb, v)] = a * pi[(vb, v)] * fwd.shifted[(j, v)] * beta[(j, v)] / c;
            }
        }
    }

    Ok(ChainPosteriors {
        gamma,
        xi,
        loglik: fwd.loglik,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Path-enumeration oracle: sums over all k2^s state paths directly.
    fn enumerate_paths(
        e: &Array2<f64>,
        pi: &Array2<f64>,
        rho: &Array1<f64>,
    ) -> (f64, Array2<f64>, Array3<f64>) {
        let (s, k2) = e.dim();
        let n_paths = k2.pow(s as u32);
        let mut total = 0.0;
        let mut gamma = Array2::zeros((s, k2));
        let mut xi = Array3::zeros((s - 1, k2, k2));
        for code in 0..n_paths {
            let mut path = vec![0usize; s];
            let mut c = code;
            for j in 0..s {
                path[j] = c % k2;
                c /= k2;
            }
            let mut w = rho[path[0]] * e[(0, path[0])].exp();
            for j in 1..s {
                w *= pi[(path[j - 1], path[j])] * e[(j, path[j])].exp();
            }
            total += w;
            for j in 0..s {
                gamma[(j, path[j])] += w;
            }
            for j in 1..s {
                xi[(j - 1, path[j - 1], path[j])] += w;
            }
        }
        gamma.mapv_inplace(|x| x / total);
        xi.mapv_inplace(|x| x / total);
        (total.ln(), gamma, xi)
    }

    #[test]
    fn single_state_chain_is_a_plain_sum() {
        let e = LogEmissionTable::new(array![[-1.0], [-2.5], [0.25]]).unwrap();
        let pi = array![[1.0]];
        let rho = array![1.0];
        assert_abs_diff_eq!(
            chain_loglik(&e, &pi, &rho).unwrap(),
            -3.25,
            epsilon = 1e-14
        );
        let post = chain_posteriors(&e, &pi, &rho).unwrap();
        assert!(post.gamma.iter().all(|&g| (g - 1.0).abs() < 1e-14));
        assert!(post.xi.iter().all(|&x| (x - 1.0).abs() < 1e-14));
    }

    #[test]
    fn one_column_chain_is_a_mixture() {
        let e = LogEmissionTable::new(array![[0.2f64.ln(), 0.6f64.ln()]]).unwrap();
        let pi = array![[0.5, 0.5], [0.5, 0.5]];
        let rho = array![0.5, 0.5];
        assert_abs_diff_eq!(
            chain_loglik(&e, &pi, &rho).unwrap(),
            0.4f64.ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn matches_path_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let e_raw = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-3.0..1.0));
            let p = rng.gen_range(0.1..0.9);
            let q = rng.gen_range(0.1..0.9);
            let pi = array![[p, 1.0 - p], [1.0 - q, q]];
            let rho = crate::model::stationary_distribution(&pi).unwrap();
            let e = LogEmissionTable::new(e_raw.clone()).unwrap();

            let (ll0, g0, x0) = enumerate_paths(&e_raw, &pi, &rho);
            let post = chain_posteriors(&e, &pi, &rho).unwrap();
            assert_abs_diff_eq!(post.loglik, ll0, epsilon = 1e-10);
            assert_abs_diff_eq!(chain_loglik(&e, &pi, &rho).unwrap(), post.loglik);
            for (a, b) in post.gamma.iter().zip(g0.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
            for (a, b) in post.xi.iter().zip(x0.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn uniform_emissions_leave_the_prior() {
        let e = LogEmissionTable::from_fn(6, 3, |_, _| -0.7).unwrap();
        let pi = array![[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.4, 0.1, 0.5]];
        let rho = crate::model::stationary_distribution(&pi).unwrap();
        let post = chain_posteriors(&e, &pi, &rho).unwrap();
        for j in 0..6 {
            for v in 0..3 {
                assert_abs_diff_eq!(post.gamma[(j, v)], rho[v], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn column_shifts_move_loglik_but_not_posteriors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let e_raw = Array2::from_shape_fn((5, 2), |_| rng.gen_range(-4.0..0.0));
        let pi = array![[0.8, 0.2], [0.3, 0.7]];
        let rho = crate::model::stationary_distribution(&pi).unwrap();
        let shifts: Vec<f64> = (0..5).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let mut e_shifted = e_raw.clone();
        for j in 0..5 {
            for v in 0..2 {
                e_shifted[(j, v)] += shifts[j];
            }
        }
        let base = chain_posteriors(&LogEmissionTable::new(e_raw).unwrap(), &pi, &rho).unwrap();
        let moved =
            chain_posteriors(&LogEmissionTable::new(e_shifted).unwrap(), &pi, &rho).unwrap();
        let total: f64 = shifts.iter().sum();
        assert_abs_diff_eq!(moved.loglik, base.loglik + total, epsilon = 1e-9);
        for (a, b) in moved.gamma.iter().zip(base.gamma.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
        for (a, b) in moved.xi.iter().zip(base.xi.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn long_chains_do_not_underflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let e = LogEmissionTable::from_fn(10_000, 2, |_, _| rng.gen_range(-300.0..-100.0)).unwrap();
        let pi = array![[0.9, 0.1], [0.2, 0.8]];
        let rho = crate::model::stationary_distribution(&pi).unwrap();
        let post = chain_posteriors(&e, &pi, &rho).unwrap();
        assert!(post.loglik.is_finite());
        for j in 0..10_000 {
            let sum = post.gamma[(j, 0)] + post.gamma[(j, 1)];
            assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn rejects_nonfinite_emissions_and_bad_dims() {
        assert!(LogEmissionTable::new(array![[f64::NEG_INFINITY]]).is_err());
        let e = LogEmissionTable::new(array![[0.0, 0.0]]).unwrap();
        let pi = array![[1.0]];
        let rho = array![1.0];
        assert!(matches!(
            chain_loglik(&e, &pi, &rho),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
