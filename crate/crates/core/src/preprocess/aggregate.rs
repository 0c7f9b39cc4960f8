use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorio::{FeatureSet, FrameFeatureTensor};

/// How the frame axis of a video is collapsed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameReducer {
    #[default]
    Mean,
    Max,
    /// Frames laid side by side: `frames * features` columns.
    Concat,
}

impl std::str::FromStr for FrameReducer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(FrameReducer::Mean),
            "max" => Ok(FrameReducer::Max),
            "concat" => Ok(FrameReducer::Concat),
            _ => Err(Error::validation(format!("unknown frame reducer {s:?}"))),
        }
    }
}

pub fn aggregate_frames(frames: &FrameFeatureTensor) -> Result<FeatureSet> {
    aggregate_frames_with(frames, FrameReducer::Mean)
}

pub fn aggregate_frames_with(frames: &FrameFeatureTensor, reducer: FrameReducer) -> Result<FeatureSet> {
    let [n_videos, n_frames, n_features] = frames.shape();
    if n_frames == 0 {
        return Err(Error::validation("cannot aggregate zero frames per video"));
    }
    let data = match reducer {
        FrameReducer::Mean => DMatrix::from_fn(n_videos, n_features, |v, j| {
            (0..n_frames).map(|f| frames.frame(v, f)[j]).sum::<f64>() / n_frames as f64
        }),
        FrameReducer::Max => DMatrix::from_fn(n_videos, n_features, |v, j| {
            (0..n_frames)
                .map(|f| frames.frame(v, f)[j])
                .fold(f64::NEG_INFINITY, f64::max)
        }),
        FrameReducer::Concat => DMatrix::from_fn(n_videos, n_frames * n_features, |v, c| {
            frames.frame(v, c / n_features)[c % n_features]
        }),
    };
    FeatureSet::new(
        frames.model_name.clone(),
        frames.layer_name.clone(),
        data,
        n_frames,
        true,
    )
}
