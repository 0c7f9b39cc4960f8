use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Size of the challenge training split.
pub const TRAIN_VIDEOS: usize = 1000;
/// Size of the challenge test split.
pub const TEST_VIDEOS: usize = 102;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VideoId {
    split: Split,
    index: usize,
}

impl VideoId {
    pub fn new(split: Split, index: usize, split_size: usize) -> Result<Self> {
        if index >= split_size {
            return Err(Error::validation(format!(
                "video index {index} out of range for {split:?} split of size {split_size}"
            )));
        }
        Ok(VideoId { split, index })
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn index(&self) -> usize {
        self.index
    }
}

/// Regions of interest; `WB` is the whole-brain (full-track) voxel set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RoiName {
    V1,
    V2,
    V3,
    V4,
    LOC,
    EBA,
    FFA,
    STS,
    PPA,
    WB,
}

impl RoiName {
    /// The nine mini-track regions, in challenge order.
    pub const MINI_TRACK: [RoiName; 9] = [
        RoiName::V1,
        RoiName::V2,
        RoiName::V3,
        RoiName::V4,
        RoiName::LOC,
        RoiName::EBA,
        RoiName::FFA,
        RoiName::STS,
        RoiName::PPA,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            RoiName::V1 => "V1",
            RoiName::V2 => "V2",
            RoiName::V3 => "V3",
            RoiName::V4 => "V4",
            RoiName::LOC => "LOC",
            RoiName::EBA => "EBA",
            RoiName::FFA => "FFA",
            RoiName::STS => "STS",
            RoiName::PPA => "PPA",
            RoiName::WB => "WB",
        }
    }

    pub fn is_whole_brain(&self) -> bool {
        matches!(self, RoiName::WB)
    }
}

impl fmt::Display for RoiName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RoiName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RoiName::MINI_TRACK
            .iter()
            .chain(std::iter::once(&RoiName::WB))
            .find(|r| r.as_str().eq_ignore_ascii_case(s.trim()))
            .copied()
            .ok_or_else(|| Error::validation(format!("unknown ROI name {s:?}")))
    }
}

/// fMRI responses, `[videos, repetitions, voxels]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseTensor {
    pub roi: RoiName,
    pub subject: u32,
    n_videos: usize,
    n_reps: usize,
    n_voxels: usize,
    data: Vec<f64>,
}

impl ResponseTensor {
    pub fn new(
        roi: RoiName,
        subject: u32,
        shape: [usize; 3],
        data: Vec<f64>,
    ) -> Result<Self> {
        let [n_videos, n_reps, n_voxels] = shape;
        if n_reps < 2 {
            return Err(Error::validation(format!(
                "response tensor needs at least 2 repetitions, got {n_reps}"
            )));
        }
        if data.len() != n_videos * n_reps * n_voxels {
            return Err(Error::validation(format!(
                "response data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        ensure_finite(&data, "response tensor")?;
        Ok(ResponseTensor {
            roi,
            subject,
            n_videos,
            n_reps,
            n_voxels,
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n_videos, self.n_reps, self.n_voxels]
    }

    pub fn n_videos(&self) -> usize {
        self.n_videos
    }

    pub fn n_reps(&self) -> usize {
        self.n_reps
    }

    pub fn n_voxels(&self) -> usize {
        self.n_voxels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, video: usize, rep: usize, voxel: usize) -> f64 {
        self.data[(video * self.n_reps + rep) * self.n_voxels + voxel]
    }

    /// Mean over the repetition axis, `[videos, voxels]`.
    pub fn repetition_mean(&self) -> DMatrix<f64> {
        self.mean_over_reps(0..self.n_reps)
    }

    /// Mean over a subset of repetitions, `[videos, voxels]`.
    pub fn mean_over_reps(&self, reps: impl IntoIterator<Item = usize> + Clone) -> DMatrix<f64> {
        let count = reps.clone().into_iter().count() as f64;
        DMatrix::from_fn(self.n_videos, self.n_voxels, |v, k| {
            reps.clone().into_iter().map(|r| self.get(v, r, k)).sum::<f64>() / count
        })
    }

    pub fn select_videos(&self, videos: &[usize]) -> Result<ResponseTensor> {
        let mut data = Vec::with_capacity(videos.len() * self.n_reps * self.n_voxels);
        for &v in videos {
            if v >= self.n_videos {
                return Err(Error::validation(format!(
                    "video index {v} out of range ({} videos)",
                    self.n_videos
                )));
            }
            let start = v * self.n_reps * self.n_voxels;
            data.extend_from_slice(&self.data[start..start + self.n_reps * self.n_voxels]);
        }
        Ok(ResponseTensor {
            n_videos: videos.len(),
            data,
            ..self.clone_header()
        })
    }

    pub fn select_voxels(&self, voxels: &[usize]) -> Result<ResponseTensor> {
        if let Some(&k) = voxels.iter().find(|&&k| k >= self.n_voxels) {
            return Err(Error::validation(format!(
                "voxel index {k} out of range ({} voxels)",
                self.n_voxels
            )));
        }
        let mut data = Vec::with_capacity(self.n_videos * self.n_reps * voxels.len());
        for v in 0..self.n_videos {
            for r in 0..self.n_reps {
                data.extend(voxels.iter().map(|&k| self.get(v, r, k)));
            }
        }
        Ok(ResponseTensor {
            n_voxels: voxels.len(),
            data,
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> ResponseTensor {
        ResponseTensor {
            roi: self.roi,
            subject: self.subject,
            n_videos: self.n_videos,
            n_reps: self.n_reps,
            n_voxels: self.n_voxels,
            data: Vec::new(),
        }
    }
}

/// Per-video stimulus features for one network layer, `[videos, features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub model_name: String,
    pub layer_name: String,
    pub data: DMatrix<f64>,
    pub frames_per_video: usize,
    /// True once the frame axis has been reduced to one row per video.
    pub aggregated: bool,
}

impl FeatureSet {
    pub fn new(
        model_name: impl Into<String>,
        layer_name: impl Into<String>,
        data: DMatrix<f64>,
        frames_per_video: usize,
        aggregated: bool,
    ) -> Result<Self> {
        if frames_per_video == 0 {
            return Err(Error::validation("frames_per_video must be positive"));
        }
        ensure_finite(data.iter(), "feature set")?;
        Ok(FeatureSet {
            model_name: model_name.into(),
            layer_name: layer_name.into(),
            data,
            frames_per_video,
            aggregated,
        })
    }

    pub fn n_videos(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.data.ncols()
    }

    /// Same provenance, different rows.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureSet {
        FeatureSet {
            data: self.data.select_rows(rows),
            ..self.with_data(DMatrix::zeros(0, 0))
        }
    }

    /// Same provenance, new data matrix.
    pub fn with_data(&self, data: DMatrix<f64>) -> FeatureSet {
        FeatureSet {
            model_name: self.model_name.clone(),
            layer_name: self.layer_name.clone(),
            data,
            frames_per_video: self.frames_per_video,
            aggregated: self.aggregated,
        }
    }
}

/// Raw per-frame activations, `[videos, frames, features]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameFeatureTensor {
    pub model_name: String,
    pub layer_name: String,
    n_videos: usize,
    frames_per_video: usize,
    n_features: usize,
    data: Vec<f64>,
}

impl FrameFeatureTensor {
    pub fn new(
        model_name: impl Into<String>,
        layer_name: impl Into<String>,
        shape: [usize; 3],
        data: Vec<f64>,
    ) -> Result<Self> {
        let [n_videos, frames_per_video, n_features] = shape;
        if data.len() != n_videos * frames_per_video * n_features {
            return Err(Error::validation(format!(
                "frame data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        ensure_finite(&data, "frame feature tensor")?;
        Ok(FrameFeatureTensor {
            model_name: model_name.into(),
            layer_name: layer_name.into(),
            n_videos,
            frames_per_video,
            n_features,
            data,
        })
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.n_videos, self.frames_per_video, self.n_features]
    }

    pub fn n_videos(&self) -> usize {
        self.n_videos
    }

    pub fn frames_per_video(&self) -> usize {
        self.frames_per_video
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Features of one frame.
    pub fn frame(&self, video: usize, frame: usize) -> &[f64] {
        let start = (video * self.frames_per_video + frame) * self.n_features;
        &self.data[start..start + self.n_features]
    }
}

/// Predicted responses for the test videos, `[videos, voxels]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub roi: RoiName,
    pub data: DMatrix<f64>,
}

impl PredictionMatrix {
    pub fn new(roi: RoiName, data: DMatrix<f64>) -> Result<Self> {
        ensure_finite(data.iter(), "prediction matrix")?;
        Ok(PredictionMatrix { roi, data })
    }

    /// Checks the row count against the expected test split size.
    pub fn check_test_split(&self, test_videos: usize) -> Result<()> {
        if self.data.nrows() != test_videos {
            return Err(Error::validation(format!(
                "prediction has {} rows, test split has {test_videos} videos",
                self.data.nrows()
            )));
        }
        Ok(())
    }
}
