//! Model dimensions, parameters, and the elementary quantities derived from
//! them: the stationary distribution of the column chain and Gaussian
//! log-emission densities.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Lower bound for the common variance; M-step updates below it are clamped.
pub const VAR_FLOOR: f64 = 1e-8;

/// Lower bound for mass and transition probabilities after each M-step.
/// Keeps log-space recursions finite when a component empties.
pub const PROB_FLOOR: f64 = 1e-10;

/// Residual tolerance for accepting a stationary-distribution solve.
const STATIONARY_TOL: f64 = 1e-10;

pub(crate) const LN_2PI: f64 = 1.8378770664093454;

/// Sizes of the data array and of the two latent supports.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// Number of rows (exchangeable units).
    pub r: usize,
    /// Number of columns (serially dependent positions).
    pub s: usize,
    /// Number of row support points (clusters).
    pub k1: usize,
    /// Number of column support points (segment states).
    pub k2: usize,
}

impl ModelDims {
    pub fn new(r: usize, s: usize, k1: usize, k2: usize) -> Result<Self> {
        if r == 0 || s == 0 || k1 == 0 || k2 == 0 {
            return Err(Error::DimensionMismatch(format!(
                "all dimensions must be positive, got r={r}, s={s}, k1={k1}, k2={k2}"
            )));
        }
        Ok(Self { r, s, k1, k2 })
    }

    /// Number of free parameters: `k1-1` mass probabilities, `k2(k2-1)`
    /// transition probabilities (the stationary vector is derived, not free),
    /// `k1*k2` means, and one common variance.
    pub fn free_params(&self) -> usize {
        (self.k1 - 1) + self.k2 * (self.k2 - 1) + self.k1 * self.k2 + 1
    }
}

/// Full parameter set of the two-way model.
///
/// The initial distribution of the column chain is constrained to equal its
/// stationary distribution, so it is always derived from `pi` and never
/// stored.
#[derive(Clone, Debug)]
pub struct ModelParams {
    /// Row mass probabilities, length `k1`.
    pub lambda: Array1<f64>,
    /// Column transition matrix, `k2 x k2`, row-stochastic.
    pub pi: Array2<f64>,
    /// Emission means, `k1 x k2`.
    pub psi: Array2<f64>,
    /// Common emission variance.
    pub sigma2: f64,
}

impl ModelParams {
    pub fn new(lambda: Array1<f64>, pi: Array2<f64>, psi: Array2<f64>, sigma2: f64) -> Self {
        Self {
            lambda,
            pi,
            psi,
            sigma2,
        }
    }

    pub fn k1(&self) -> usize {
        self.lambda.len()
    }

    pub fn k2(&self) -> usize {
        self.pi.nrows()
    }

    /// Stationary distribution implied by the transition matrix.
    pub fn stationary(&self) -> Result<Array1<f64>> {
        stationary_distribution(&self.pi)
    }

    pub fn validate(&self, dims: &ModelDims) -> Result<()> {
        validate_params(self, dims)
    }

    /// Clamp probabilities to [`PROB_FLOOR`] (renormalizing) and the variance
    /// to [`VAR_FLOOR`]. Applied after every M-step.
    pub(crate) fn apply_floors(&mut self) {
        floor_simplex(&mut self.lambda);
        for mut row in self.pi.rows_mut() {
            let mut v = row.to_owned();
            floor_simplex(&mut v);
            row.assign(&v);
        }
        if self.sigma2 < VAR_FLOOR {
            self.sigma2 = VAR_FLOOR;
        }
    }
}

fn floor_simplex(v: &mut Array1<f64>) {
    let mut dirty = false;
    for x in v.iter_mut() {
        if *x < PROB_FLOOR {
            *x = PROB_FLOOR;
            dirty = true;
        }
    }
    if dirty {
        let total: f64 = v.sum();
        v.mapv_inplace(|x| x / total);
    }
}

/// Check the parameter invariants at the given dimensions.
pub fn validate_params(params: &ModelParams, dims: &ModelDims) -> Result<()> {
    if params.lambda.len() != dims.k1 {
        return Err(Error::DimensionMismatch(format!(
            "lambda has length {}, expected k1={}",
            params.lambda.len(),
            dims.k1
        )));
    }
    if params.pi.nrows() != dims.k2 || params.pi.ncols() != dims.k2 {
        return Err(Error::DimensionMismatch(format!(
            "pi is {}x{}, expected {}x{}",
            params.pi.nrows(),
            params.pi.ncols(),
            dims.k2,
            dims.k2
        )));
    }
    if params.psi.nrows() != dims.k1 || params.psi.ncols() != dims.k2 {
        return Err(Error::DimensionMismatch(format!(
            "psi is {}x{}, expected {}x{}",
            params.psi.nrows(),
            params.psi.ncols(),
            dims.k1,
            dims.k2
        )));
    }
    check_simplex(params.lambda.as_slice().unwrap())
        .map_err(|m| Error::InvalidSimplex(format!("lambda: {m}")))?;
    for (v, row) in params.pi.rows().into_iter().enumerate() {
        check_simplex(row.as_slice().unwrap())
            .map_err(|m| Error::InvalidStochasticMatrix(format!("row {}: {m}", v + 1)))?;
    }
    for &x in params.psi.iter() {
        if !x.is_finite() {
            return Err(Error::NonFinite("psi entry".into()));
        }
    }
    if !params.sigma2.is_finite() || params.sigma2 < VAR_FLOOR {
        return Err(Error::NonpositiveVariance {
            value: params.sigma2,
            floor: VAR_FLOOR,
        });
    }
    Ok(())
}

fn check_simplex(v: &[f64]) -> std::result::Result<(), String> {
    let mut total = 0.0;
    for &x in v {
        if !x.is_finite() || !(0.0..=1.0).contains(&x) {
            return Err(format!("entry {x} outside [0,1]"));
        }
        total += x;
    }
    if (total - 1.0).abs() > 1e-12 {
        return Err(format!("sums to {total}, not 1"));
    }
    Ok(())
}

/// Stationary distribution of a row-stochastic matrix, obtained by solving
/// the dense linear system `rho (I - Pi + J) = 1'` where `J` is all ones.
///
/// Fails with [`Error::SingularChain`] when the system is rank-deficient
/// beyond tolerance (reducible chain) or when the solution is not a strictly
/// positive probability vector with `||rho Pi - rho||_inf <= 1e-10`.
pub fn stationary_distribution(pi: &Array2<f64>) -> Result<Array1<f64>> {
    let k = pi.nrows();
    if pi.ncols() != k || k == 0 {
        return Err(Error::DimensionMismatch(format!(
            "transition matrix must be square and nonempty, got {}x{}",
            pi.nrows(),
            pi.ncols()
        )));
    }
    if k == 1 {
        return Ok(Array1::ones(1));
    }
    // Transposed system: (I - Pi + J)' x = 1.
    let mut a = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let eye = if i == j { 1.0 } else { 0.0 };
            a[i * k + j] = eye - pi[(j, i)] + 1.0;
        }
    }
    let mut b = vec![1.0; k];
    solve_dense(&mut a, &mut b, k)?;
    let rho = Array1::from(b);

    // Accept only a genuine stationary vector.
    if rho.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::SingularChain);
    }
    let mut residual = 0.0f64;
    for v in 0..k {
        let mut acc = 0.0;
        for vb in 0..k {
            acc += rho[vb] * pi[(vb, v)];
        }
        residual = residual.max((acc - rho[v]).abs());
    }
    if residual > STATIONARY_TOL {
        return Err(Error::SingularChain);
    }
    Ok(rho)
}

/// Gaussian elimination with partial pivoting; `a` is row-major `n x n`.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize) -> Result<()> {
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_mag = a[col * n + col].abs();
        for row in col + 1..n {
            let mag = a[row * n + col].abs();
            if mag > pivot_mag {
                pivot_row = row;
                pivot_mag = mag;
            }
        }
        if pivot_mag <= STATIONARY_TOL {
            return Err(Error::SingularChain);
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                a[row * n + j] -= factor * a[col * n + j];
            }
            b[row] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for j in col + 1..n {
            acc -= a[col * n + j] * b[j];
        }
        b[col] = acc / a[col * n + col];
    }
    Ok(())
}

/// Log density of `N(psi, sigma2)` at `y`.
#[inline]
pub fn log_emission(y: f64, psi: f64, sigma2: f64) -> f64 {
    let d = y - psi;
    -0.5 * (LN_2PI + sigma2.ln()) - d * d / (2.0 * sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn valid_params() -> ModelParams {
        ModelParams::new(
            array![0.5, 0.5],
            array![[0.8808, 0.1192], [0.1192, 0.8808]],
            array![[1.0, 2.0], [3.0, 4.0]],
            0.5,
        )
    }

    #[test]
    fn stationary_benchmark_matrix_is_uniform() {
        let pi = array![[0.8808, 0.1192], [0.1192, 0.8808]];
        let rho = stationary_distribution(&pi).unwrap();
        assert_abs_diff_eq!(rho[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(rho[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn stationary_doubly_stochastic_is_uniform() {
        let pi = array![[0.5, 0.5], [0.5, 0.5]];
        let rho = stationary_distribution(&pi).unwrap();
        assert_abs_diff_eq!(rho[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(rho[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn stationary_asymmetric_matches_balance_equation() {
        // 0.1 rho1 = 0.3 rho2 with rho1 + rho2 = 1 gives (0.75, 0.25).
        let pi = array![[0.9, 0.1], [0.3, 0.7]];
        let rho = stationary_distribution(&pi).unwrap();
        assert_abs_diff_eq!(rho[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(rho[1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn stationary_rejects_reducible_chain() {
        let pi = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(matches!(
            stationary_distribution(&pi),
            Err(Error::SingularChain)
        ));
    }

    #[test]
    fn stationary_residual_and_permutation_invariance() {
        let pi = array![[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.4, 0.1, 0.5]];
        let rho = stationary_distribution(&pi).unwrap();
        let check = rho.dot(&pi);
        for v in 0..3 {
            assert_abs_diff_eq!(check[v], rho[v], epsilon = 1e-10);
        }
        assert_abs_diff_eq!(rho.sum(), 1.0, epsilon = 1e-12);

        // Permute states 0 and 2 simultaneously in rows and columns.
        let perm = [2usize, 1, 0];
        let mut permuted = Array2::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                permuted[(i, j)] = pi[(perm[i], perm[j])];
            }
        }
        let rho_p = stationary_distribution(&permuted).unwrap();
        for v in 0..3 {
            assert_abs_diff_eq!(rho_p[v], rho[perm[v]], epsilon = 1e-10);
        }
    }

    #[test]
    fn log_emission_closed_forms() {
        // Zero residual.
        assert_abs_diff_eq!(
            log_emission(3.0, 3.0, 0.7),
            -0.5 * (LN_2PI + 0.7f64.ln()),
            epsilon = 1e-15
        );
        // Standard normal at zero.
        assert_abs_diff_eq!(log_emission(0.0, 0.0, 1.0), -0.9189385332046727, epsilon = 1e-12);
        // y = psi, sigma2 = 0.5: -0.5 * ln(pi).
        assert_abs_diff_eq!(log_emission(1.0, 1.0, 0.5), -0.5723649429247001, epsilon = 1e-12);
    }

    #[test]
    fn log_emission_integrates_to_one() {
        // Trapezoid quadrature of exp(log_emission) over psi +/- 10 sigma.
        let (psi, sigma2) = (1.3, 0.37);
        let sigma = sigma2.sqrt();
        let n = 20_000;
        let (lo, hi) = (psi - 10.0 * sigma, psi + 10.0 * sigma);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for t in 0..=n {
            let y = lo + t as f64 * h;
            let w = if t == 0 || t == n { 0.5 } else { 1.0 };
            total += w * log_emission(y, psi, sigma2).exp();
        }
        total *= h;
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn validate_accepts_valid_params() {
        let dims = ModelDims::new(4, 5, 2, 2).unwrap();
        assert!(valid_params().validate(&dims).is_ok());
    }

    #[test]
    fn validate_rejects_bad_simplex() {
        let dims = ModelDims::new(4, 5, 2, 2).unwrap();
        let mut p = valid_params();
        p.lambda = array![0.7, 0.5];
        assert!(matches!(p.validate(&dims), Err(Error::InvalidSimplex(_))));
    }

    #[test]
    fn validate_rejects_bad_transition_rows_and_variance() {
        let dims = ModelDims::new(4, 5, 2, 2).unwrap();
        let mut p = valid_params();
        p.pi = array![[0.9, 0.2], [0.1, 0.9]];
        assert!(matches!(
            p.validate(&dims),
            Err(Error::InvalidStochasticMatrix(_))
        ));

        let mut p = valid_params();
        p.sigma2 = 0.0;
        assert!(matches!(
            p.validate(&dims),
            Err(Error::NonpositiveVariance { .. })
        ));
    }

    #[test]
    fn validate_rejects_wrong_shapes() {
        let dims = ModelDims::new(4, 5, 3, 2).unwrap();
        assert!(matches!(
            valid_params().validate(&dims),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn free_param_counts_match_closed_form() {
        let d = |k1, k2| ModelDims::new(1, 1, k1, k2).unwrap().free_params();
        assert_eq!(d(3, 4), 27);
        assert_eq!(d(3, 12), 171);
        assert_eq!(d(10, 15), 370);
        assert_eq!(d(1, 1), 2);
    }

    #[test]
    fn floors_restore_degenerate_params() {
        let mut p = valid_params();
        p.lambda = array![1.0, 0.0];
        p.sigma2 = 1e-12;
        p.apply_floors();
        assert!(p.lambda[1] >= PROB_FLOOR / 2.0);
        assert_abs_diff_eq!(p.lambda.sum(), 1.0, epsilon = 1e-15);
        assert_eq!(p.sigma2, VAR_FLOOR);
    }
}
