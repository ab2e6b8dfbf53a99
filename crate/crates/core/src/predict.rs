//! Maximum-a-posteriori prediction of row clusters and column states, plus
//! the fitted cell means at the predicted label pair.
//!
//! Row posteriors are the row-composite cluster posteriors. Column
//! posteriors are a convention: the smoothed per-row state marginals of the
//! row-composite chains, averaged over rows. This uses all data while
//! staying inside the fitted composite framework; a joint smoothing under
//! the exact model would require the infeasible configuration enumeration.

use ndarray::Array2;

use crate::data::TwoWayArray;
use crate::error::Result;
use crate::model::ModelParams;
use crate::row::row_e_step;

/// MAP labels (1-based), their posteriors, and the implied cell means.
#[derive(Clone, Debug)]
pub struct Prediction {
    /// Row cluster labels in `1..=k1`.
    pub row_labels: Vec<usize>,
    /// Column state labels in `1..=k2`.
    pub col_labels: Vec<usize>,
    /// `r x k1` cluster posteriors.
    pub row_posteriors: Array2<f64>,
    /// `s x k2` averaged state posteriors.
    pub col_posteriors: Array2<f64>,
    /// `r x s` matrix of `psi` at the predicted label pair.
    pub cell_means: Array2<f64>,
}

/// Argmax with the lowest index winning ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = k;
        }
    }
    best
}

pub fn predict_map(data: &TwoWayArray, params: &ModelParams) -> Result<Prediction> {
    let (r, s) = (data.nrows(), data.ncols());
    let k2 = params.k2();
    let post = row_e_step(data, params)?;

    let row_posteriors = post.w1_hat.clone();
    let mut col_posteriors = Array2::zeros((s, k2));
    for i in 0..r {
        for j in 0..s {
            for v in 0..k2 {
                col_posteriors[(j, v)] += post.z1_marg[(i, j, v)] / r as f64;
            }
        }
    }

    let row_labels: Vec<usize> = (0..r)
        .map(|i| argmax(row_posteriors.row(i).as_slice().unwrap()) + 1)
        .collect();
    let col_labels: Vec<usize> = (0..s)
        .map(|j| argmax(col_posteriors.row(j).as_slice().unwrap()) + 1)
        .collect();

    let cell_means = Array2::from_shape_fn((r, s), |(i, j)| {
        params.psi[(row_labels[i] - 1, col_labels[j] - 1)]
    });

    Ok(Prediction {
        row_labels,
        col_labels,
        row_posteriors,
        col_posteriors,
        cell_means,
    })
}
