//! Cross-validation selection of the latent support sizes `(k1, k2)`.
//!
//! The data are split into training and validation halves by drawing cells
//! uniformly at random; each candidate pair is fitted on the training cells
//! with the row-column composite EM treating held-out cells as missing
//! completely at random, and scored with the same composite objective on the
//! validation cells. Splits are evaluated leniently: a row or column that
//! loses all its cells to the other half simply contributes nothing.

use ndarray::Array2;
use rand::seq::index::sample;
use rayon::prelude::*;

use crate::data::TwoWayArray;
use crate::error::{Error, Result};
use crate::fit::{derive_seed, rng_for, FitConfig};
use crate::model::ModelDims;
use crate::rowcol::{fit_rowcol_cl_impl, rowcol_objective_impl};

/// One random half-split of the cells.
#[derive(Clone, Debug)]
pub struct CvSplit {
    pub train_mask: Array2<bool>,
    pub valid_mask: Array2<bool>,
    pub seed: u64,
}

/// Draw `d_count` independent half-splits: each selects `floor(r*s/2)`
/// validation cells uniformly without replacement. Split `d` is driven by a
/// stream seed derived from `(seed, d)`.
pub fn make_cv_splits(dims: &ModelDims, d_count: usize, seed: u64) -> Vec<CvSplit> {
    let (r, s) = (dims.r, dims.s);
    let n = r * s;
    let n_valid = n / 2;
    (0..d_count)
        .map(|d| {
            let split_seed = derive_seed(seed, &[0x02, d as u64]);
            let mut rng = rng_for(seed, &[0x02, d as u64]);
            let mut valid = Array2::from_elem((r, s), false);
            for idx in sample(&mut rng, n, n_valid) {
                valid[(idx / s, idx % s)] = true;
            }
            let train = valid.mapv(|m| !m);
            CvSplit {
                train_mask: train,
                valid_mask: valid,
                seed: split_seed,
            }
        })
        .collect()
}

/// Per-candidate cross-validation summaries.
#[derive(Clone, Debug)]
pub struct SelectionTable {
    /// Candidate `(k1, k2)` pairs, in the order supplied.
    pub grid: Vec<(usize, usize)>,
    /// Mean validation composite log-likelihood per candidate; NaN when the
    /// candidate is flagged.
    pub cl_cv: Vec<f64>,
    /// Number of splits each candidate wins (ties award all maximizers).
    pub n_cv: Vec<usize>,
    /// Relative performance index in [0, 1]; NaN when flagged.
    pub q: Vec<f64>,
    /// Free-parameter counts.
    pub n_params: Vec<usize>,
    /// True when any split aborted for the candidate; its `cl_cv` and `q`
    /// are then undefined.
    pub failed: Vec<bool>,
    pub n_splits: usize,
}

impl SelectionTable {
    /// Candidate maximizing `q`; among candidates within `threshold` of the
    /// maximum, the one with fewest free parameters (ties: higher `q`, then
    /// lexicographically smallest pair).
    pub fn parsimony_choice(&self, threshold: f64) -> Option<(usize, usize)> {
        let qmax = self
            .q
            .iter()
            .filter(|x| x.is_finite())
            .fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        if !qmax.is_finite() {
            return None;
        }
        self.grid
            .iter()
            .zip(self.q.iter())
            .zip(self.n_params.iter())
            .filter(|((_, &q), _)| q.is_finite() && q >= threshold * qmax)
            .min_by(|((pa, &qa), &na), ((pb, &qb), &nb)| {
                na.cmp(&nb)
                    .then(qb.partial_cmp(&qa).unwrap())
                    .then(pa.cmp(pb))
            })
            .map(|((pair, _), _)| *pair)
    }
}

/// Elementwise `(x - min) / (max - min)` over the finite entries; NaN entries
/// stay NaN. Errors when fewer than two distinct finite values are present.
pub fn relative_performance(cl_cv: &[f64]) -> Result<Vec<f64>> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in cl_cv.iter().filter(|x| x.is_finite()) {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if !lo.is_finite() || !hi.is_finite() || hi <= lo {
        return Err(Error::DegenerateRange);
    }
    Ok(cl_cv
        .iter()
        .map(|&x| if x.is_finite() { (x - lo) / (hi - lo) } else { f64::NAN })
        .collect())
}

/// Validation scores within this absolute tolerance of the split maximum all
/// count as wins.
const WIN_TOL: f64 = 1e-6;

/// Run the full cross-validation sweep on complete data.
///
/// Fits of every `(split, pair)` job derive their start seeds from
/// `(seed, d, k1, k2)`, so the sweep is reproducible and the jobs are
/// independent. A job that fails aborts its pair: the pair is flagged and
/// reported with undefined summaries.
pub fn cv_selection(
    data: &TwoWayArray,
    grid: &[(usize, usize)],
    d_count: usize,
    config: &FitConfig,
    seed: u64,
) -> Result<SelectionTable> {
    if !data.is_complete() {
        return Err(Error::MissingDataUnsupported);
    }
    if grid.is_empty() {
        return Err(Error::DimensionMismatch("empty candidate grid".into()));
    }
    let (r, s) = (data.nrows(), data.ncols());
    if r * s < 2 {
        return Err(Error::DimensionMismatch(
            "cross validation needs at least two cells".into(),
        ));
    }
    let base_dims = ModelDims::new(r, s, 1, 1)?;
    let splits = make_cv_splits(&base_dims, d_count, seed);

    let jobs: Vec<(usize, usize)> = (0..d_count)
        .flat_map(|d| (0..grid.len()).map(move |g| (d, g)))
        .collect();
    let scores: Vec<Result<f64>> = jobs
        .par_iter()
        .map(|&(d, g)| {
            let (k1, k2) = grid[g];
            let dims = ModelDims::new(r, s, k1, k2)?;
            let train = data.restrict(&splits[d].train_mask)?;
            let valid = data.restrict(&splits[d].valid_mask)?;
            let mut cfg = config.clone();
            cfg.seed = derive_seed(seed, &[0x03, d as u64, k1 as u64, k2 as u64]);
            let fit = fit_rowcol_cl_impl(&train, &dims, &cfg, true)?;
            rowcol_objective_impl(&valid, &fit.params, true)
        })
        .collect();

    let mut table = vec![vec![f64::NAN; grid.len()]; d_count];
    let mut failed = vec![false; grid.len()];
    for (&(d, g), score) in jobs.iter().zip(scores.iter()) {
        match score {
            Ok(x) => table[d][g] = *x,
            Err(_) => failed[g] = true,
        }
    }

    let mut cl_cv = vec![f64::NAN; grid.len()];
    let mut n_cv = vec![0usize; grid.len()];
    for g in 0..grid.len() {
        if failed[g] {
            continue;
        }
        cl_cv[g] = (0..d_count).map(|d| table[d][g]).sum::<f64>() / d_count as f64;
    }
    for row in &table {
        let best = row
            .iter()
            .filter(|x| x.is_finite())
            .fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        if !best.is_finite() {
            continue;
        }
        for (g, &x) in row.iter().enumerate() {
            if x.is_finite() && x >= best - WIN_TOL {
                n_cv[g] += 1;
            }
        }
    }

    let q = match relative_performance(&cl_cv) {
        Ok(q) => q,
        // A single-candidate grid (or all-equal scores) has no spread.
        Err(Error::DegenerateRange) => vec![f64::NAN; grid.len()],
        Err(e) => return Err(e),
    };
    let n_params = grid
        .iter()
        .map(|&(k1, k2)| ModelDims { r, s, k1, k2 }.free_params())
        .collect();

    Ok(SelectionTable {
        grid: grid.to_vec(),
        cl_cv,
        n_cv,
        q,
        n_params,
        failed,
        n_splits: d_count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{log_emission, ModelParams};
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};
    use rand::prelude::*;

    #[test]
    fn splits_halve_the_cells_and_are_complementary() {
        let dims = ModelDims::new(4, 5, 1, 1).unwrap();
        let splits = make_cv_splits(&dims, 3, 99);
        assert_eq!(splits.len(), 3);
        for sp in &splits {
            let n_valid = sp.valid_mask.iter().filter(|&&m| m).count();
            assert_eq!(n_valid, 10);
            for (t, v) in sp.train_mask.iter().zip(sp.valid_mask.iter()) {
                assert!(t ^ v);
            }
        }
    }

    #[test]
    fn splits_are_deterministic_in_the_seed() {
        let dims = ModelDims::new(6, 7, 1, 1).unwrap();
        let a = make_cv_splits(&dims, 4, 123);
        let b = make_cv_splits(&dims, 4, 123);
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.valid_mask, y.valid_mask);
        }
        let c = make_cv_splits(&dims, 4, 124);
        assert!(a.iter().zip(c.iter()).any(|(x, y)| x.valid_mask != y.valid_mask));
    }

    #[test]
    fn split_frequencies_are_near_uniform() {
        let dims = ModelDims::new(10, 10, 1, 1).unwrap();
        let n = 10_000;
        let mut counts = Array2::<f64>::zeros((10, 10));
        for sp in make_cv_splits(&dims, n, 7) {
            for ((i, j), &v) in sp.valid_mask.indexed_iter() {
                if v {
                    counts[(i, j)] += 1.0;
                }
            }
        }
        for &c in counts.iter() {
            let freq = c / n as f64;
            assert!((0.45..=0.55).contains(&freq), "frequency {freq} out of band");
        }
    }

    #[test]
    fn relative_performance_endpoints() {
        let q = relative_performance(&[-10.0, -4.0, -1.0]).unwrap();
        assert_abs_diff_eq!(q[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q[2], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(q[1], 6.0 / 9.0, epsilon = 1e-15);
        assert!(matches!(
            relative_performance(&[1.0, 1.0]),
            Err(Error::DegenerateRange)
        ));
        let with_nan = relative_performance(&[0.0, f64::NAN, 2.0]).unwrap();
        assert!(with_nan[1].is_nan());
    }

    #[test]
    fn single_candidate_grid_wins_every_split() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let data = TwoWayArray::complete(ndarray::Array2::from_shape_fn((5, 8), |_| {
            rng.gen_range(-1.0..1.0)
        }))
        .unwrap();
        let cfg = FitConfig {
            n_starts: 1,
            max_iter: 100,
            ..FitConfig::default()
        };
        let table = cv_selection(&data, &[(1, 1)], 3, &cfg, 5).unwrap();
        assert_eq!(table.n_cv[0], 3);
        assert!(!table.failed[0]);
        assert_eq!(table.n_params[0], 2);

        // With k1 = k2 = 1 the validation score is twice the Gaussian
        // log-density of the validation cells at the training-cell MLE.
        let splits = make_cv_splits(&ModelDims::new(5, 8, 1, 1).unwrap(), 3, 5);
        let mut expect = 0.0;
        for sp in &splits {
            let train: Vec<f64> = data
                .values()
                .indexed_iter()
                .filter(|(idx, _)| sp.train_mask[*idx])
                .map(|(_, &y)| y)
                .collect();
            let mean = train.iter().sum::<f64>() / train.len() as f64;
            let var = train.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>()
                / train.len() as f64;
            let p = ModelParams::new(
                Array1::ones(1),
                array![[1.0]],
                array![[mean]],
                var,
            );
            let score: f64 = data
                .values()
                .indexed_iter()
                .filter(|(idx, _)| sp.valid_mask[*idx])
                .map(|(_, &y)| 2.0 * log_emission(y, p.psi[(0, 0)], p.sigma2))
                .sum();
            expect += score;
        }
        expect /= 3.0;
        assert_abs_diff_eq!(table.cl_cv[0], expect, epsilon = 1e-6 * expect.abs());
    }

    #[test]
    fn selection_is_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(32);
        let data = TwoWayArray::complete(ndarray::Array2::from_shape_fn((6, 10), |_| {
            rng.gen_range(-1.0..1.0)
        }))
        .unwrap();
        let cfg = FitConfig {
            n_starts: 2,
            max_iter: 60,
            ..FitConfig::default()
        };
        let grid = [(1, 1), (2, 2)];
        let a = cv_selection(&data, &grid, 2, &cfg, 11).unwrap();
        let b = cv_selection(&data, &grid, 2, &cfg, 11).unwrap();
        assert_eq!(a.cl_cv, b.cl_cv);
        assert_eq!(a.n_cv, b.n_cv);
        assert_eq!(a.q, b.q);
    }
}
