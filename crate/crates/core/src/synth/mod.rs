//! Synthetic datasets with a known linear ground truth.
//!
//! Every "layer" is an independent Gaussian feature set. Responses of each
//! ROI are `S = X·W* + noise`, where `X` is the latent features of that ROI's
//! signal layer and the columns of `W*` have unit norm, so each voxel's
//! signal has unit variance.
//!
//! Draw order from the single seeded stream:
//! 1. for each layer: the latent matrix (train videos, then test videos, row
//!    major); the mixing matrix when `ambient_features` is set; frame jitter
//!    when `frame_jitter > 0`, video by video and frame by frame;
//! 2. for each ROI: `W*` (row major), then train noise and test noise, each in
//!    `[video, rep, voxel]` order.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{score_track, ReportMeta, ScoreOptions, ScoreReport};
use crate::preprocess::aggregate_frames;
use crate::rng::{Stream, ALGORITHM};
use crate::tensorio::{
    self, FeatureSet, FrameFeatureTensor, Metadata, PredictionMatrix, ResponseTensor, RoiName, Split, VetTensor,
};

pub const MODEL_NAME: &str = "synthnet";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthRoi {
    pub roi: RoiName,
    /// 1-based index of the layer that drives this ROI.
    pub signal_layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_test: usize,
    /// Latent dimension of every layer.
    pub n_features: usize,
    pub n_voxels: usize,
    pub n_reps: usize,
    pub noise_std: f64,
    #[serde(default = "one")]
    pub n_layers: usize,
    /// 1-based index of the layer that drives `roi`.
    #[serde(default = "one")]
    pub signal_layer: usize,
    pub seed: u64,
    #[serde(default = "default_roi")]
    pub roi: RoiName,
    /// Further ROIs, each with its own voxels and signal layer.
    #[serde(default)]
    pub extra_rois: Vec<SynthRoi>,
    #[serde(default = "one")]
    pub subject: u32,
    #[serde(default = "one")]
    pub frames_per_video: usize,
    /// Std of per-frame noise added on top of each video's features.
    #[serde(default)]
    pub frame_jitter: f64,
    /// When set, each layer's latent features are mixed into this many
    /// observed columns by a random Gaussian matrix.
    #[serde(default)]
    pub ambient_features: Option<usize>,
    /// Drive responses with `(x² − 1)/√2` of the latent features instead of
    /// the features themselves.
    #[serde(default)]
    pub nonlinear: bool,
}

fn one<T: From<u8>>() -> T {
    T::from(1)
}

fn default_roi() -> RoiName {
    RoiName::WB
}

impl SynthSpec {
    pub fn new(n_train: usize, n_test: usize, n_features: usize, n_voxels: usize, noise_std: f64, seed: u64) -> Self {
        SynthSpec {
            n_train,
            n_test,
            n_features,
            n_voxels,
            n_reps: 2,
            noise_std,
            n_layers: 1,
            signal_layer: 1,
            seed,
            roi: RoiName::WB,
            extra_rois: Vec::new(),
            subject: 1,
            frames_per_video: 1,
            frame_jitter: 0.0,
            ambient_features: None,
            nonlinear: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::validation(msg));
        if self.n_train < 10 {
            return bad(format!("n_train must be >= 10, got {}", self.n_train));
        }
        if self.n_test < 3 {
            return bad(format!("n_test must be >= 3, got {}", self.n_test));
        }
        if self.n_reps < 2 {
            return bad(format!("n_reps must be >= 2, got {}", self.n_reps));
        }
        if self.n_features == 0 || self.n_voxels == 0 || self.n_layers == 0 || self.frames_per_video == 0 {
            return bad("n_features, n_voxels, n_layers and frames_per_video must be >= 1".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be finite and >= 0, got {}", self.noise_std));
        }
        if !(self.frame_jitter >= 0.0 && self.frame_jitter.is_finite()) {
            return bad(format!("frame_jitter must be finite and >= 0, got {}", self.frame_jitter));
        }
        if self.ambient_features == Some(0) {
            return bad("ambient_features must be >= 1".into());
        }
        let mut seen = Vec::new();
        for r in self.rois() {
            if !(1..=self.n_layers).contains(&r.signal_layer) {
                return bad(format!(
                    "signal layer {} of ROI {} is outside 1..={}",
                    r.signal_layer, r.roi, self.n_layers
                ));
            }
            if seen.contains(&r.roi) {
                return bad(format!("ROI {} listed twice", r.roi));
            }
            seen.push(r.roi);
        }
        Ok(())
    }

    pub fn rois(&self) -> Vec<SynthRoi> {
        let mut all = vec![SynthRoi {
            roi: self.roi,
            signal_layer: self.signal_layer,
        }];
        all.extend(self.extra_rois.iter().copied());
        all
    }

    pub fn layer_name(index: usize) -> String {
        format!("layer{index}")
    }

    fn n_total(&self) -> usize {
        self.n_train + self.n_test
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthLayer {
    pub name: String,
    /// `[n_train + n_test, n_features]`
    pub latent: DMatrix<f64>,
    pub train: FrameFeatureTensor,
    pub test: FrameFeatureTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthRoiData {
    pub roi: RoiName,
    pub signal_layer: usize,
    /// `W*`, `[n_features, n_voxels]`
    pub weights: DMatrix<f64>,
    pub signal_train: DMatrix<f64>,
    pub signal_test: DMatrix<f64>,
    pub train: ResponseTensor,
    pub test: ResponseTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBundle {
    pub spec: SynthSpec,
    pub layers: Vec<SynthLayer>,
    /// The primary ROI first, then `extra_rois` in order.
    pub rois: Vec<SynthRoiData>,
}

fn gaussian(rows: usize, cols: usize, s: &mut Stream) -> DMatrix<f64> {
    // row major, so the stream order matches the documented layout
    DMatrix::from_row_iterator(rows, cols, (0..rows * cols).map(|_| s.standard_normal()).collect::<Vec<_>>())
}

fn frames_of(spec: &SynthSpec, name: &str, base: &DMatrix<f64>, rows: std::ops::Range<usize>, s: &mut Stream) -> Result<FrameFeatureTensor> {
    let f = spec.frames_per_video;
    let m = base.ncols();
    let mut data = Vec::with_capacity(rows.len() * f * m);
    for v in rows.clone() {
        for _ in 0..f {
            for j in 0..m {
                let jitter = if spec.frame_jitter > 0.0 { spec.frame_jitter * s.standard_normal() } else { 0.0 };
                data.push(base[(v, j)] + jitter);
            }
        }
    }
    FrameFeatureTensor::new(MODEL_NAME, name, [rows.len(), f, m], data)
}

fn responses(spec: &SynthSpec, roi: RoiName, signal: &DMatrix<f64>, s: &mut Stream) -> Result<ResponseTensor> {
    let (n, v) = signal.shape();
    let mut data = Vec::with_capacity(n * spec.n_reps * v);
    for i in 0..n {
        for _ in 0..spec.n_reps {
            for k in 0..v {
                data.push(signal[(i, k)] + spec.noise_std * s.standard_normal());
            }
        }
    }
    ResponseTensor::new(roi, spec.subject, [n, spec.n_reps, v], data)
}

pub fn generate(spec: &SynthSpec) -> Result<SynthBundle> {
    spec.validate()?;
    let mut s = Stream::new(spec.seed);
    let (n, d) = (spec.n_total(), spec.n_features);

    let mut layers = Vec::with_capacity(spec.n_layers);
    for l in 1..=spec.n_layers {
        let name = SynthSpec::layer_name(l);
        let latent = gaussian(n, d, &mut s);
        let base = match spec.ambient_features {
            Some(m) => &latent * gaussian(d, m, &mut s) / (d as f64).sqrt(),
            None => latent.clone(),
        };
        let train = frames_of(spec, &name, &base, 0..spec.n_train, &mut s)?;
        let test = frames_of(spec, &name, &base, spec.n_train..n, &mut s)?;
        layers.push(SynthLayer { name, latent, train, test });
    }

    let mut rois = Vec::new();
    for r in spec.rois() {
        let mut weights = gaussian(d, spec.n_voxels, &mut s);
        for mut col in weights.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        let mut x = layers[r.signal_layer - 1].latent.clone();
        if spec.nonlinear {
            x.apply(|v| *v = (*v * *v - 1.0) / std::f64::consts::SQRT_2);
        }
        let signal = x * &weights;
        let signal_train = signal.rows(0, spec.n_train).into_owned();
        let signal_test = signal.rows(spec.n_train, spec.n_test).into_owned();
        let train = responses(spec, r.roi, &signal_train, &mut s)?;
        let test = responses(spec, r.roi, &signal_test, &mut s)?;
        rois.push(SynthRoiData {
            roi: r.roi,
            signal_layer: r.signal_layer,
            weights,
            signal_train,
            signal_test,
            train,
            test,
        });
    }
    Ok(SynthBundle {
        spec: spec.clone(),
        layers,
        rois,
    })
}

impl SynthBundle {
    pub fn primary(&self) -> &SynthRoiData {
        &self.rois[0]
    }

    pub fn layer(&self, index: usize) -> Result<&SynthLayer> {
        index
            .checked_sub(1)
            .and_then(|i| self.layers.get(i))
            .ok_or_else(|| Error::validation(format!("no layer {index}")))
    }

    /// Frame-averaged features of a layer for one split.
    pub fn features(&self, index: usize, split: Split) -> Result<FeatureSet> {
        let layer = self.layer(index)?;
        aggregate_frames(match split {
            Split::Train => &layer.train,
            Split::Test => &layer.test,
        })
    }

    /// Writes the bundle under `dir` and returns the written paths:
    ///
    /// ```text
    /// spec.json
    /// features/<layer>_{train,test}.vet
    /// responses/sub<NN>_<ROI>_{train,test}.vet
    /// truth/<ROI>_weights.vet
    /// truth/<ROI>_signal_{train,test}.vet
    /// ```
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        let mut written = Vec::new();
        for sub in ["features", "responses", "truth"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::write(&p, e))?;
        }
        let spec_path = dir.join("spec.json");
        let mut text = serde_json::to_string_pretty(&self.spec).map_err(|e| Error::format(e.to_string()))?;
        text.push('\n');
        fs::write(&spec_path, text).map_err(|e| Error::write(&spec_path, e))?;
        written.push(spec_path);

        let mut meta = Metadata::new();
        meta.insert("seed".into(), self.spec.seed.into());
        meta.insert("rng".into(), ALGORITHM.into());

        for layer in &self.layers {
            for (split, frames) in [("train", &layer.train), ("test", &layer.test)] {
                let p = dir.join("features").join(format!("{}_{split}.vet", layer.name));
                tensorio::save_with_meta(&p, frames, &meta)?;
                written.push(p);
            }
        }
        for r in &self.rois {
            for (split, t) in [("train", &r.train), ("test", &r.test)] {
                let p = dir.join("responses").join(response_file_name(t.subject, r.roi, split));
                tensorio::save_with_meta(&p, t, &meta)?;
                written.push(p);
            }
            let p = dir.join("truth").join(format!("{}_weights.vet", r.roi));
            let mut wmeta = meta.clone();
            wmeta.insert("kind".into(), "weights".into());
            wmeta.insert("signal_layer".into(), SynthSpec::layer_name(r.signal_layer).into());
            tensorio::write_tensor(&p, &VetTensor::from_matrix(&r.weights), &wmeta)?;
            written.push(p);
            for (split, sig) in [("train", &r.signal_train), ("test", &r.signal_test)] {
                let p = dir.join("truth").join(format!("{}_signal_{split}.vet", r.roi));
                tensorio::save_with_meta(&p, &PredictionMatrix::new(r.roi, sig.clone())?, &meta)?;
                written.push(p);
            }
        }
        Ok(written)
    }
}

/// `sub01_V1_train.vet`
pub fn response_file_name(subject: u32, roi: RoiName, split: &str) -> String {
    format!("sub{subject:02}_{roi}_{split}.vet")
}

/// Scores the true test signal of the primary ROI against its noisy test
/// responses: the normalized score a perfect model earns.
pub fn oracle_report(bundle: &SynthBundle, opts: &ScoreOptions) -> Result<ScoreReport> {
    let r = bundle.primary();
    let pred = PredictionMatrix::new(r.roi, r.signal_test.clone())?;
    let mut report = score_track(&pred, &r.test, None, opts)?;
    report.metadata = ReportMeta {
        model: "oracle".into(),
        seed: Some(bundle.spec.seed),
        subject: Some(bundle.spec.subject),
        ..report.metadata
    };
    Ok(report)
}

pub fn oracle_score(bundle: &SynthBundle) -> Result<f64> {
    Ok(oracle_report(bundle, &ScoreOptions::default())?.track_score())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluate::reliability_all;
    use crate::evaluate::SplitRule;
    use crate::regress::{fit_ridge, FitOptions};

    fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
        let v: Vec<f64> = v.into_iter().collect();
        v.iter().sum::<f64>() / v.len() as f64
    }

    #[test]
    fn spec_bounds() {
        assert!(generate(&SynthSpec::new(9, 5, 2, 2, 1.0, 0)).is_err());
        let mut spec = SynthSpec::new(20, 5, 2, 2, 1.0, 0);
        spec.n_reps = 1;
        assert!(generate(&spec).is_err());
        let mut spec = SynthSpec::new(20, 5, 2, 2, 1.0, 0);
        spec.signal_layer = 2;
        assert!(matches!(generate(&spec), Err(Error::Validation(_))));
    }

    #[test]
    fn noiseless_reps_identical() {
        let b = generate(&SynthSpec::new(50, 10, 4, 6, 0.0, 1)).unwrap();
        let t = &b.primary().train;
        for v in 0..t.n_videos() {
            for k in 0..t.n_voxels() {
                assert_eq!(t.get(v, 0, k), t.get(v, 1, k));
            }
        }
        for c in reliability_all(t, SplitRule::FirstHalf).unwrap() {
            assert!((c.r - 1.0).abs() < 1e-12);
        }
        assert!((oracle_score(&b).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unit_noise_halves_reliability() {
        let rel: Vec<f64> = (0..10)
            .map(|seed| {
                let b = generate(&SynthSpec::new(500, 100, 20, 30, 1.0, seed)).unwrap();
                mean(reliability_all(&b.primary().train, SplitRule::FirstHalf).unwrap().iter().map(|c| c.r))
            })
            .collect();
        assert!((mean(rel) - 0.5).abs() < 0.07);
    }

    #[test]
    fn same_seed_same_bundle() {
        let mut spec = SynthSpec::new(30, 5, 3, 4, 0.7, 9);
        spec.n_layers = 3;
        spec.frames_per_video = 4;
        spec.frame_jitter = 0.1;
        spec.ambient_features = Some(7);
        spec.extra_rois = vec![SynthRoi { roi: RoiName::V1, signal_layer: 3 }];
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        spec.seed = 10;
        assert_ne!(generate(&spec).unwrap().primary().train, {
            spec.seed = 9;
            generate(&spec).unwrap().primary().train.clone()
        });
    }

    #[test]
    fn shapes_and_unit_weights() {
        let mut spec = SynthSpec::new(30, 6, 3, 4, 0.5, 2);
        spec.frames_per_video = 5;
        spec.ambient_features = Some(8);
        let b = generate(&spec).unwrap();
        assert_eq!(b.layers[0].train.shape(), [30, 5, 8]);
        assert_eq!(b.layers[0].test.shape(), [6, 5, 8]);
        assert_eq!(b.primary().train.shape(), [30, 2, 4]);
        for col in b.primary().weights.column_iter() {
            assert!((col.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ridge_recovers_weights() {
        let b = generate(&SynthSpec::new(400, 10, 8, 5, 0.0, 3)).unwrap();
        let x = b.features(1, Split::Train).unwrap().data;
        let y = b.primary().train.repetition_mean();
        let m = fit_ridge(&x, &y, 1e-12, &FitOptions::default()).unwrap();
        let err = (m.weights - &b.primary().weights).abs().max();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn oracle_near_one_and_null_near_zero() {
        let mut oracle = Vec::new();
        let mut null = Vec::new();
        for seed in 0..10 {
            let b = generate(&SynthSpec::new(500, 100, 20, 30, 1.0, seed)).unwrap();
            oracle.push(oracle_score(&b).unwrap());
            let r = b.primary();
            let means = r.train.repetition_mean().row_mean();
            // column means carry no per-video variation; add a tiny unrelated
            // wiggle so the correlation is defined
            let mut s = Stream::new(seed + 100);
            let pred = DMatrix::from_fn(r.test.n_videos(), r.test.n_voxels(), |_, k| {
                means[k] + 1e-6 * s.standard_normal()
            });
            let rep = score_track(
                &PredictionMatrix::new(r.roi, pred).unwrap(),
                &r.test,
                None,
                &ScoreOptions::default(),
            )
            .unwrap();
            null.push(rep.track_score());
        }
        let (o, z) = (mean(oracle), mean(null));
        assert!((0.9..=1.1).contains(&o), "{o}");
        assert!(z.abs() < 0.1, "{z}");
    }

    #[test]
    fn nonlinear_signal_keeps_unit_variance() {
        let mut spec = SynthSpec::new(4000, 10, 6, 3, 0.0, 4);
        spec.nonlinear = true;
        let b = generate(&spec).unwrap();
        for col in b.primary().signal_train.column_iter() {
            let m = col.mean();
            let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / col.len() as f64;
            assert!((var - 1.0).abs() < 0.1, "{var}");
        }
    }

    #[test]
    fn save_writes_loadable_files() {
        let mut spec = SynthSpec::new(12, 4, 3, 2, 1.0, 5);
        spec.n_layers = 2;
        spec.extra_rois = vec![SynthRoi { roi: RoiName::V1, signal_layer: 2 }];
        let b = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let files = b.save(dir.path()).unwrap();
        assert_eq!(files.len(), 1 + 2 * 2 + 2 * 5);
        let t: ResponseTensor = tensorio::load(dir.path().join("responses/sub01_V1_train.vet")).unwrap();
        assert_eq!(t.shape(), [12, 2, 2]);
        let back: SynthSpec =
            serde_json::from_str(&fs::read_to_string(dir.path().join("spec.json")).unwrap()).unwrap();
        assert_eq!(back, spec);
    }
}
