use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{normalized_score, pearson_unchecked, reliability_all, spearman_brown, SplitRule};
use crate::error::{Error, Result};
use crate::tensorio::{PredictionMatrix, ResponseTensor, RoiName};

/// Voxel indices of each ROI within a response tensor.
pub type RoiPartition = BTreeMap<RoiName, Vec<usize>>;

/// How the split-half reliability becomes the noise ceiling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeilingCorrection {
    /// Use the split-half correlation directly.
    None,
    /// Step the half-data reliability up to the full repetition mean,
    /// `2ρ / (1 + ρ)`, so a noiseless model scores 1 in expectation.
    #[default]
    SpearmanBrown,
}

impl std::str::FromStr for CeilingCorrection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(CeilingCorrection::None),
            "spearman_brown" => Ok(CeilingCorrection::SpearmanBrown),
            _ => Err(Error::validation(format!("unknown ceiling correction {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreOptions {
    pub split_rule: SplitRule,
    pub ceiling: CeilingCorrection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelScore {
    pub raw_r: f64,
    /// Split-half correlation.
    pub reliability: f64,
    /// Reliability the raw correlation is normalized by.
    pub ceiling: f64,
    pub normalized: f64,
    /// Prediction or truth constant across videos.
    pub raw_degenerate: bool,
    /// Ceiling at or below epsilon; counted as 0 in averages.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiSummary {
    pub n_voxels: usize,
    pub n_excluded: usize,
    pub mean_raw_r: f64,
    pub mean_reliability: f64,
    pub mean_normalized: f64,
}

impl RoiSummary {
    fn from_voxels<'a>(voxels: impl Iterator<Item = &'a VoxelScore> + Clone) -> RoiSummary {
        let n = voxels.clone().count();
        let mean = |f: fn(&VoxelScore) -> f64| {
            if n == 0 {
                0.0
            } else {
                voxels.clone().map(f).sum::<f64>() / n as f64
            }
        };
        RoiSummary {
            n_voxels: n,
            n_excluded: voxels.clone().filter(|v| v.excluded).count(),
            mean_raw_r: mean(|v| v.raw_r),
            mean_reliability: mean(|v| v.reliability),
            mean_normalized: mean(|v| v.normalized),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    /// Label used in tables and plots.
    pub model: String,
    pub layer: Option<String>,
    pub subject: Option<u32>,
    pub seed: Option<u64>,
    pub notes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub metadata: ReportMeta,
    pub per_voxel: Vec<VoxelScore>,
    pub per_roi: BTreeMap<RoiName, RoiSummary>,
    pub track: RoiSummary,
}

impl ScoreReport {
    pub fn track_score(&self) -> f64 {
        self.track.mean_normalized
    }

    pub fn roi_score(&self, roi: RoiName) -> Option<f64> {
        self.per_roi.get(&roi).map(|s| s.mean_normalized)
    }
}

/// Scores predicted responses against repetition-averaged measurements.
///
/// Without a partition every voxel belongs to `truth.roi`. With one, ROI
/// summaries follow the partition and the track score averages the union of
/// its voxels. Excluded voxels stay in the averages with a score of 0.
pub fn score_track(
    pred: &PredictionMatrix,
    truth: &ResponseTensor,
    roi_partition: Option<&RoiPartition>,
    opts: &ScoreOptions,
) -> Result<ScoreReport> {
    let (videos, voxels) = pred.data.shape();
    if videos != truth.n_videos() || voxels != truth.n_voxels() {
        return Err(Error::validation(format!(
            "prediction is {videos}x{voxels}, truth has {} videos and {} voxels",
            truth.n_videos(),
            truth.n_voxels()
        )));
    }
    let owned_partition;
    let partition = match roi_partition {
        Some(p) => {
            check_partition(p, voxels)?;
            p
        }
        None => {
            owned_partition = RoiPartition::from([(truth.roi, (0..voxels).collect())]);
            &owned_partition
        }
    };

    let mean_truth = truth.repetition_mean();
    let reliabilities = reliability_all(truth, opts.split_rule)?;
    let per_voxel: Vec<VoxelScore> = (0..voxels)
        .into_par_iter()
        .map(|k| {
            let raw = pearson_unchecked(pred.data.column(k).as_slice(), mean_truth.column(k).as_slice());
            let reliability = reliabilities[k].r;
            let ceiling = match opts.ceiling {
                CeilingCorrection::None => reliability,
                CeilingCorrection::SpearmanBrown if reliability > 0.0 => spearman_brown(reliability, 2.0),
                CeilingCorrection::SpearmanBrown => reliability,
            };
            let norm = normalized_score(raw.r, ceiling);
            VoxelScore {
                raw_r: raw.r,
                reliability,
                ceiling,
                normalized: norm.value,
                raw_degenerate: raw.degenerate,
                excluded: norm.excluded,
            }
        })
        .collect();

    let per_roi = partition
        .iter()
        .map(|(roi, idx)| (*roi, RoiSummary::from_voxels(idx.iter().map(|&k| &per_voxel[k]))))
        .collect();
    let mut in_scope: Vec<usize> = partition.values().flatten().copied().collect();
    in_scope.sort_unstable();
    let track = RoiSummary::from_voxels(in_scope.iter().map(|&k| &per_voxel[k]));

    Ok(ScoreReport {
        metadata: ReportMeta::default(),
        per_voxel,
        per_roi,
        track,
    })
}

fn check_partition(p: &RoiPartition, voxels: usize) -> Result<()> {
    let mut seen = vec![false; voxels];
    for (roi, idx) in p {
        for &k in idx {
            if k >= voxels {
                return Err(Error::validation(format!(
                    "ROI {roi} lists voxel {k}, only {voxels} voxels present"
                )));
            }
            if std::mem::replace(&mut seen[k], true) {
                return Err(Error::validation(format!("voxel {k} belongs to more than one ROI")));
            }
        }
    }
    Ok(())
}

/// Averages per-subject summaries: each subject's ROI means first, then the
/// mean across subjects. The result carries no per-voxel scores.
pub fn aggregate_subjects(reports: &[ScoreReport]) -> Result<ScoreReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::validation("no subject reports to aggregate"))?;
    let n = reports.len() as f64;
    let average = |summaries: Vec<&RoiSummary>| RoiSummary {
        n_voxels: summaries.iter().map(|s| s.n_voxels).sum(),
        n_excluded: summaries.iter().map(|s| s.n_excluded).sum(),
        mean_raw_r: summaries.iter().map(|s| s.mean_raw_r).sum::<f64>() / n,
        mean_reliability: summaries.iter().map(|s| s.mean_reliability).sum::<f64>() / n,
        mean_normalized: summaries.iter().map(|s| s.mean_normalized).sum::<f64>() / n,
    };
    let mut per_roi = BTreeMap::new();
    for roi in first.per_roi.keys() {
        let summaries = reports
            .iter()
            .map(|r| {
                r.per_roi.get(roi).ok_or_else(|| {
                    Error::validation(format!("ROI {roi} missing from a subject report"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        per_roi.insert(*roi, average(summaries));
    }
    let mut metadata = first.metadata.clone();
    metadata.subject = None;
    metadata
        .notes
        .insert("subject_pooling".into(), format!("mean of {} per-subject means", reports.len()));
    Ok(ScoreReport {
        metadata,
        per_voxel: Vec::new(),
        per_roi,
        track: average(reports.iter().map(|r| &r.track).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use nalgebra::DMatrix;

    fn noisy_truth(videos: usize, reps: usize, voxels: usize, noise: f64, seed: u64) -> (DMatrix<f64>, ResponseTensor) {
        let mut s = Stream::new(seed);
        let signal = DMatrix::from_fn(videos, voxels, |_, _| s.standard_normal());
        let mut data = Vec::with_capacity(videos * reps * voxels);
        for v in 0..videos {
            for _ in 0..reps {
                for k in 0..voxels {
                    data.push(signal[(v, k)] + noise * s.standard_normal());
                }
            }
        }
        (signal, ResponseTensor::new(RoiName::WB, 1, [videos, reps, voxels], data).unwrap())
    }

    #[test]
    fn perfect_prediction_of_the_mean() {
        let (_, truth) = noisy_truth(30, 3, 5, 0.5, 1);
        let pred = PredictionMatrix::new(RoiName::WB, truth.repetition_mean()).unwrap();
        let opts = ScoreOptions { ceiling: CeilingCorrection::None, ..Default::default() };
        let rep = score_track(&pred, &truth, None, &opts).unwrap();
        for v in &rep.per_voxel {
            assert!((v.raw_r - 1.0).abs() < 1e-12);
            assert!((v.normalized - 1.0 / v.reliability.sqrt()).abs() < 1e-12);
            assert!(v.normalized > 1.0, "scores above 1 are not clamped");
        }
    }

    #[test]
    fn shape_mismatch() {
        let (_, truth) = noisy_truth(10, 2, 3, 1.0, 2);
        let pred = PredictionMatrix::new(RoiName::WB, DMatrix::zeros(10, 4)).unwrap();
        assert!(matches!(score_track(&pred, &truth, None, &ScoreOptions::default()), Err(Error::Validation(_))));
    }

    #[test]
    fn partition_summaries() {
        let (signal, truth) = noisy_truth(40, 2, 6, 0.3, 3);
        let pred = PredictionMatrix::new(RoiName::WB, signal).unwrap();
        let part = RoiPartition::from([(RoiName::V1, vec![0, 1, 2]), (RoiName::V2, vec![4, 5])]);
        let rep = score_track(&pred, &truth, Some(&part), &ScoreOptions::default()).unwrap();
        assert_eq!(rep.track.n_voxels, 5);
        let v1 = (0..3).map(|k| rep.per_voxel[k].normalized).sum::<f64>() / 3.0;
        assert!((rep.roi_score(RoiName::V1).unwrap() - v1).abs() < 1e-15);
        let bad = RoiPartition::from([(RoiName::V1, vec![0, 1]), (RoiName::V2, vec![1])]);
        assert!(score_track(&pred, &truth, Some(&bad), &ScoreOptions::default()).is_err());
    }

    #[test]
    fn excluded_voxels_count_as_zero() {
        // voxel 1: halves anti-correlated -> negative reliability
        let data: Vec<f64> = (0..10)
            .flat_map(|v| {
                let x = (v as f64 * 1.3).sin();
                [x, x, x, -x]
            })
            .collect();
        let truth = ResponseTensor::new(RoiName::V1, 1, [10, 2, 2], data).unwrap();
        let pred = PredictionMatrix::new(RoiName::V1, truth.repetition_mean()).unwrap();
        let rep = score_track(&pred, &truth, None, &ScoreOptions::default()).unwrap();
        assert!(rep.per_voxel[1].excluded);
        assert_eq!(rep.per_voxel[1].normalized, 0.0);
        assert_eq!(rep.track.n_excluded, 1);
        assert!((rep.track_score() - rep.per_voxel[0].normalized / 2.0).abs() < 1e-15);
    }

    #[test]
    fn subject_average() {
        let (s1, t1) = noisy_truth(20, 2, 3, 0.5, 4);
        let (s2, t2) = noisy_truth(20, 2, 3, 0.5, 5);
        let r1 = score_track(&PredictionMatrix::new(RoiName::WB, s1).unwrap(), &t1, None, &ScoreOptions::default()).unwrap();
        let r2 = score_track(&PredictionMatrix::new(RoiName::WB, s2).unwrap(), &t2, None, &ScoreOptions::default()).unwrap();
        let avg = aggregate_subjects(&[r1.clone(), r2.clone()]).unwrap();
        assert!((avg.track_score() - (r1.track_score() + r2.track_score()) / 2.0).abs() < 1e-15);
        assert!(aggregate_subjects(&[]).is_err());
    }
}
