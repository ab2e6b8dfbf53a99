//! The observed two-way array: an `r x s` matrix of reals with an optional
//! missing-cell mask (`true` marks an observed cell).

use ndarray::Array2;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct TwoWayArray {
    values: Array2<f64>,
    mask: Array2<bool>,
}

impl TwoWayArray {
    /// Array with every cell observed. All values must be finite.
    pub fn complete(values: Array2<f64>) -> Result<Self> {
        let mask = Array2::from_elem(values.dim(), true);
        Self::with_mask(values, mask)
    }

    /// Array with an explicit mask. Masked-out values are ignored; observed
    /// values must be finite.
    pub fn with_mask(values: Array2<f64>, mask: Array2<bool>) -> Result<Self> {
        if values.dim() != mask.dim() {
            return Err(Error::DimensionMismatch(format!(
                "values are {:?} but mask is {:?}",
                values.dim(),
                mask.dim()
            )));
        }
        if values.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        for ((i, j), &obs) in mask.indexed_iter() {
            if obs && !values[(i, j)].is_finite() {
                return Err(Error::NonFinite(format!(
                    "observed cell ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
        }
        Ok(Self { values, mask })
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    #[inline]
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    #[inline]
    pub fn observed(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)]
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn mask(&self) -> &Array2<bool> {
        &self.mask
    }

    pub fn n_observed(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    pub fn row_observed(&self, i: usize) -> usize {
        self.mask.row(i).iter().filter(|&&m| m).count()
    }

    pub fn col_observed(&self, j: usize) -> usize {
        self.mask.column(j).iter().filter(|&&m| m).count()
    }

    /// Sorted vector of the observed values (used by quantile-anchored
    /// initialization and by normal scores).
    pub fn observed_values(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .mask
            .indexed_iter()
            .filter(|&(_, &m)| m)
            .map(|(idx, _)| self.values[idx])
            .collect();
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    /// Restriction of this array to the cells where `keep` is true; the
    /// result's mask is the conjunction of the two masks.
    pub fn restrict(&self, keep: &Array2<bool>) -> Result<Self> {
        if keep.dim() != self.mask.dim() {
            return Err(Error::DimensionMismatch(format!(
                "restriction mask is {:?}, data are {:?}",
                keep.dim(),
                self.mask.dim()
            )));
        }
        let mask = Array2::from_shape_fn(self.mask.dim(), |idx| self.mask[idx] && keep[idx]);
        Ok(Self {
            values: self.values.clone(),
            mask,
        })
    }

    /// Error out when some row has no observed cells.
    pub(crate) fn require_nonempty_rows(&self) -> Result<()> {
        for i in 0..self.nrows() {
            if self.row_observed(i) == 0 {
                return Err(Error::EmptyRow(i + 1));
            }
        }
        Ok(())
    }

    /// Error out when some column has no observed cells.
    pub(crate) fn require_nonempty_cols(&self) -> Result<()> {
        for j in 0..self.ncols() {
            if self.col_observed(j) == 0 {
                return Err(Error::EmptyColumn(j + 1));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn complete_array_roundtrip() {
        let a = TwoWayArray::complete(array![[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert!(a.is_complete());
        assert_eq!(a.n_observed(), 4);
        assert_eq!(a.value(1, 0), 3.0);
    }

    #[test]
    fn mask_dimensions_must_agree() {
        let err = TwoWayArray::with_mask(
            array![[1.0, 2.0]],
            Array2::from_elem((2, 2), true),
        );
        assert!(matches!(err, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn observed_cells_must_be_finite() {
        let err = TwoWayArray::complete(array![[1.0, f64::NAN]]);
        assert!(matches!(err, Err(Error::NonFinite(_))));
        // NaN under the mask is fine.
        let ok = TwoWayArray::with_mask(array![[1.0, f64::NAN]], array![[true, false]]);
        assert!(ok.is_ok());
    }

    #[test]
    fn empty_row_and_column_detection() {
        let a = TwoWayArray::with_mask(
            array![[1.0, 2.0], [0.0, 0.0]],
            array![[true, true], [false, false]],
        )
        .unwrap();
        assert!(matches!(a.require_nonempty_rows(), Err(Error::EmptyRow(2))));
        assert!(a.require_nonempty_cols().is_ok());
    }
}
