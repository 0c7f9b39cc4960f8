//! Train/validation splits, k-fold cross-validation over penalty grids, and
//! the per-ROI choice of network layer and model family.

mod cv;
mod select;
mod split;

pub use cv::{
    cv_score, default_grid, lasso_grid, mean_voxel_correlation, ridge_grid, select_lambda, CvOptions, CvScores,
    DEFAULT_N_LAMBDAS, DEFAULT_LAMBDA_RATIO,
};
pub use select::{select_layer_per_roi, SelectConfig, SelectionRow, SelectionTable};
pub use split::{make_folds, make_split, CvPlan, SplitPlan, DEFAULT_CV_FOLDS, DEFAULT_TRAIN_FRACTION};
