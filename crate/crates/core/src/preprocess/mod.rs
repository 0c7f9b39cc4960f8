//! From per-frame activations to regression-ready features:
//! frame aggregation, PCA on the training videos, then per-column z-scoring.

mod aggregate;
mod pca;
mod standardize;

pub use aggregate::{aggregate_frames, aggregate_frames_with, FrameReducer};
pub use pca::{fit_pca, transform_pca, PcaModel, DEFAULT_COMPONENTS};
pub use standardize::{apply_standardizer, fit_standardizer, Standardizer, CONSTANT_STD};
