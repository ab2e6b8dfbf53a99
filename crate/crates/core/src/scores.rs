//! Row-wise normal-score standardization: observed values in each row are
//! replaced by standard-normal quantiles of their Blom plotting positions
//! `(rank - 3/8) / (m + 1/4)`, with average ranks for ties. Missing cells
//! pass through untouched.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::TwoWayArray;
use crate::error::{Error, Result};

pub fn normal_scores(data: &TwoWayArray) -> Result<TwoWayArray> {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let (r, s) = (data.nrows(), data.ncols());
    let mut values = data.values().clone();

    for i in 0..r {
        let mut cells: Vec<(usize, f64)> = (0..s)
            .filter(|&j| data.observed(i, j))
            .map(|j| (j, data.value(i, j)))
            .collect();
        let m = cells.len();
        if m < 2 {
            return Err(Error::DegenerateRow(i + 1));
        }
        cells.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        if cells[0].1 == cells[m - 1].1 {
            return Err(Error::DegenerateRow(i + 1));
        }

        // Average ranks over runs of equal values (1-based ranks).
        let mut ranks = vec![0.0; m];
        let mut lo = 0;
        while lo < m {
            let mut hi = lo;
            while hi + 1 < m && cells[hi + 1].1 == cells[lo].1 {
                hi += 1;
            }
            let avg = (lo + hi) as f64 / 2.0 + 1.0;
            for rank in ranks.iter_mut().take(hi + 1).skip(lo) {
                *rank = avg;
            }
            lo = hi + 1;
        }

        for (t, &(j, _)) in cells.iter().enumerate() {
            let p = (ranks[t] - 0.375) / (m as f64 + 0.25);
            values[(i, j)] = normal.inverse_cdf(p);
        }
    }

    TwoWayArray::with_mask(values, data.mask().clone())
}
