//! Data model for stimulus features, fMRI responses and predictions, plus the
//! VET binary container they are stored in.

mod csv_matrix;
mod types;
pub(crate) mod vet;

pub use csv_matrix::{read_csv_matrix, write_csv_matrix};
pub use types::{
    FeatureSet, FrameFeatureTensor, PredictionMatrix, ResponseTensor, RoiName, Split, VideoId,
    TEST_VIDEOS, TRAIN_VIDEOS,
};
pub use vet::{
    load, load_with_meta, read_tensor, save, save_with_meta, write_tensor, Metadata, VetCodec,
    VetTensor, DTYPE_F32, MAGIC, VERSION,
};
