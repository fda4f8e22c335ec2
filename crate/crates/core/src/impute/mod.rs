//! Gradient-boosted imputation of missing observations.

mod cv;
mod gbrt;
mod metrics;
mod pipeline;

pub use cv::{grid_search_cv, kfold, split_holdout, CvOutcome, GridScore, HyperGrid, MIN_HOLDOUT_ROWS};
pub use gbrt::{fit_gbrt, Dataset, HyperParams, RegressionTree, TrainedEnsemble, TreeNode};
pub use metrics::{r2, rate_confidence, rmse};
pub use pipeline::{
    cross_country_predict, impute_series, select_predictors, ImputationConfig, ImputationMethod,
    ImputationOutcome, ImputationReport, SelectedPredictor, SetupResult, DUPLICATE_CORRELATION,
};
