//! Two-way discrete latent variable model for "clustering-by-segmentation"
//! problems: exchangeable rows of a data matrix are clustered while serially
//! dependent columns are segmented by a stationary hidden Markov chain, with
//! homoscedastic Gaussian cell emissions.
//!
//! Estimation is by EM under three objectives:
//!
//! * the exact log-likelihood ([`fit_full`]), feasible when `k1^r` is small;
//! * the row composite log-likelihood ([`fit_row_cl`]), which treats rows as
//!   independent mixed hidden Markov chains;
//! * the row-column composite log-likelihood ([`fit_rowcol_cl`]), which adds a
//!   per-column mixture term and is the recommended estimator.
//!
//! The crate also provides cross-validation selection of the numbers of row
//! and column support points ([`cv_selection`]), a Monte-Carlo benchmark
//! harness ([`run_scenario`]), normal-score standardization, MAP prediction,
//! and CSV / scenario-file I/O for the `twoway` command-line front end.

mod chain;
mod data;
mod error;
mod fit;
mod full;
pub mod io;
mod model;
mod predict;
mod row;
mod rowcol;
mod scores;
mod select;
mod sim;
mod transition;

pub use chain::{chain_loglik, chain_posteriors, ChainPosteriors, LogEmissionTable};
pub use data::TwoWayArray;
pub use error::{Error, Result};
pub use fit::{FitConfig, FitResult, Method};
pub use full::{brute_force_loglik, fit_full, full_e_step, full_loglik, FullPosteriors, RowConfigs};
pub use model::{
    log_emission, stationary_distribution, validate_params, ModelDims, ModelParams, PROB_FLOOR,
    VAR_FLOOR,
};
pub use predict::{predict_map, Prediction};
pub use row::{fit_row_cl, row_e_step, row_loglik, RowClPosteriors};
pub use rowcol::{column_e_step, column_loglik, fit_rowcol_cl, rowcol_objective, ColumnClPosteriors};
pub use scores::normal_scores;
pub use select::{cv_selection, make_cv_splits, relative_performance, CvSplit, SelectionTable};
pub use sim::{
    align_labels, alignment, benchmark_truth, run_scenario, sample_data, AccuracyReport,
    LatentLabels, MethodAccuracy, ParamAccuracy, Scenario,
};
pub use transition::{maximize_constrained_transitions, TransitionCriterion};
