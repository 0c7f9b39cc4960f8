//! Config-driven end-to-end run and the file-level stages it shares with the
//! command line: aggregate frames, reduce with PCA, standardize, select a
//! layer and family per ROI, refit, predict the test videos and score them.
//!
//! Input layout:
//!
//! ```text
//! <features_dir>/<layer>_train.vet     frames or features
//! <features_dir>/<layer>_test.vet      optional
//! <responses_dir>/sub<NN>_<ROI>_train.vet
//! <responses_dir>/sub<NN>_<ROI>_test.vet   optional
//! ```
//!
//! Output layout under `output_dir`: `features/`, `reduced/`,
//! `selection.csv`, `selection.json`, `models/`, `predictions/` and
//! `scores/`. Every file gets a manifest sidecar.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{aggregate_subjects, emit_plotdata, emit_report, score_track};
use crate::evaluate::{ReportFormat, ReportMeta, RoiPartition, ScoreOptions, ScoreReport};
use crate::manifest::Provenance;
use crate::modelselect::{make_split, select_layer_per_roi, SelectConfig, SelectionTable};
use crate::modelselect::{DEFAULT_CV_FOLDS, DEFAULT_LAMBDA_RATIO, DEFAULT_N_LAMBDAS, DEFAULT_TRAIN_FRACTION};
use crate::preprocess::{aggregate_frames_with, fit_pca, fit_standardizer, transform_pca};
use crate::preprocess::{FrameReducer, PcaModel, Standardizer, DEFAULT_COMPONENTS};
use crate::regress::{fit_family, Family, FamilyParams, FitOptions, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::synth::response_file_name;
use crate::tensorio::{self, FeatureSet, FrameFeatureTensor, Metadata, PredictionMatrix, ResponseTensor, RoiName};
use crate::tensorio::VetCodec;

fn default_model_name() -> String {
    "model".into()
}
fn default_pca_k() -> usize {
    DEFAULT_COMPONENTS
}
fn yes() -> bool {
    true
}
fn default_families() -> Vec<Family> {
    vec![Family::Lasso]
}
fn default_alpha() -> f64 {
    0.5
}
fn default_n_lambdas() -> usize {
    DEFAULT_N_LAMBDAS
}
fn default_lambda_ratio() -> f64 {
    DEFAULT_LAMBDA_RATIO
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}
fn default_fraction() -> f64 {
    DEFAULT_TRAIN_FRACTION
}
fn default_cv_k() -> usize {
    DEFAULT_CV_FOLDS
}
fn default_subjects() -> Vec<u32> {
    vec![1]
}

/// JSON run configuration. Relative paths resolve against the directory of
/// the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub features_dir: PathBuf,
    pub responses_dir: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default = "default_model_name")]
    pub model_name: String,
    /// Candidate layers in network order; ties go to the earlier one.
    pub layers: Vec<String>,
    /// When set, frame tensors must have exactly this many frames.
    #[serde(default)]
    pub frames_per_video: Option<usize>,
    #[serde(default)]
    pub frame_reducer: FrameReducer,
    #[serde(default = "default_pca_k")]
    pub pca_k: usize,
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default = "default_families")]
    pub families: Vec<Family>,
    /// Elastic-net mixing weight.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub lambda_grid: Option<Vec<f64>>,
    #[serde(default = "default_n_lambdas")]
    pub n_lambdas: usize,
    #[serde(default = "default_lambda_ratio")]
    pub lambda_ratio: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "yes")]
    pub fit_intercept: bool,
    pub rois: Vec<RoiName>,
    #[serde(default = "default_fraction")]
    pub split_fraction: f64,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default = "default_cv_k")]
    pub cv_k: usize,
    /// Defaults to `split_seed`.
    #[serde(default)]
    pub cv_seed: Option<u64>,
    #[serde(default = "default_subjects")]
    pub subjects: Vec<u32>,
    #[serde(default)]
    pub workers: Option<usize>,
}

impl PipelineConfig {
    /// A config with every optional field at its default.
    pub fn new(
        features_dir: impl Into<PathBuf>,
        responses_dir: impl Into<PathBuf>,
        output_dir: impl Into<PathBuf>,
        layers: Vec<String>,
        rois: Vec<RoiName>,
    ) -> Self {
        let value = serde_json::json!({
            "features_dir": features_dir.into(),
            "responses_dir": responses_dir.into(),
            "output_dir": output_dir.into(),
            "layers": layers,
            "rois": rois,
        });
        serde_json::from_value(value).expect("defaults deserialize")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut cfg.features_dir, &mut cfg.responses_dir, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::validation(msg));
        if self.pca_k < 1 {
            return bad(format!("pca_k must be >= 1, got {}", self.pca_k));
        }
        if self.cv_k < 2 {
            return bad(format!("cv_k must be >= 2, got {}", self.cv_k));
        }
        if self.layers.is_empty() || self.rois.is_empty() || self.families.is_empty() || self.subjects.is_empty() {
            return bad("layers, rois, families and subjects must all be non-empty".into());
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return bad(format!("split_fraction must lie in (0, 1), got {}", self.split_fraction));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.frames_per_video == Some(0) {
            return bad("frames_per_video must be >= 1".into());
        }
        for dir in [&self.features_dir, &self.responses_dir] {
            if !dir.is_dir() {
                return Err(Error::io(
                    dir,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found"),
                ));
            }
        }
        Ok(())
    }

    pub fn family_params(&self) -> FamilyParams {
        FamilyParams {
            lambda: 0.0,
            alpha: self.alpha,
            tol: self.tol,
            max_iter: self.max_iter,
            opts: FitOptions {
                fit_intercept: self.fit_intercept,
            },
        }
    }

    pub fn select_config(&self) -> SelectConfig {
        SelectConfig {
            families: self.families.clone(),
            params: self.family_params(),
            cv_folds: self.cv_k,
            cv_seed: self.cv_seed.unwrap_or(self.split_seed),
            lambda_grid: self.lambda_grid.clone(),
            n_lambdas: self.n_lambdas,
            lambda_ratio: self.lambda_ratio,
        }
    }
}

/// Reads a features file, collapsing frames when it holds a frame tensor.
pub fn load_features(path: &Path, reducer: FrameReducer, frames_per_video: Option<usize>) -> Result<FeatureSet> {
    let (tensor, meta) = tensorio::read_tensor(path)?;
    match tensorio::vet::meta_str(&meta, "kind")? {
        FrameFeatureTensor::KIND => {
            let frames = FrameFeatureTensor::from_vet(tensor, &meta)?;
            if let Some(f) = frames_per_video {
                if frames.frames_per_video() != f {
                    return Err(Error::validation(format!(
                        "{} has {} frames per video, expected {f}",
                        path.display(),
                        frames.frames_per_video()
                    )));
                }
            }
            aggregate_frames_with(&frames, reducer)
        }
        FeatureSet::KIND => FeatureSet::from_vet(tensor, &meta),
        other => Err(Error::format(format!("{}: {other:?} is not a feature file", path.display()))),
    }
}

/// PCA and optional z-scoring fitted on the training rows.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub pca: PcaModel,
    pub standardizer: Option<Standardizer>,
}

impl Reduction {
    pub fn fit(train: &FeatureSet, k: usize, standardize: bool) -> Result<Self> {
        let pca = fit_pca(train, k)?;
        let standardizer = if standardize {
            Some(fit_standardizer(&transform_pca(&pca, train)?.data)?)
        } else {
            None
        };
        Ok(Reduction { pca, standardizer })
    }

    pub fn apply(&self, x: &FeatureSet) -> Result<FeatureSet> {
        let reduced = transform_pca(&self.pca, x)?;
        match &self.standardizer {
            Some(s) => Ok(reduced.with_data(s.apply(&reduced.data)?)),
            None => Ok(reduced),
        }
    }
}

/// Component count actually used: at most `min(videos − 1, features)`,
/// since centering leaves no more directions than that.
pub fn effective_components(requested: usize, train: &FeatureSet) -> usize {
    let cap = (train.n_videos() - 1).min(train.n_features()).max(1);
    if requested > cap {
        warn!(
            "layer {}: pca_k={requested} exceeds min(videos - 1, features) = {cap}; using {cap}",
            train.layer_name
        );
    }
    requested.min(cap)
}

fn load_responses(dir: &Path, subject: u32, roi: RoiName, split: &str) -> Result<Option<ResponseTensor>> {
    let path = dir.join(response_file_name(subject, roi, split));
    if !path.exists() {
        return Ok(None);
    }
    let t: ResponseTensor = tensorio::load(&path)?;
    if t.roi != roi || t.subject != subject {
        warn!(
            "{} is labelled {} / subject {}; using {roi} / subject {subject} from its name",
            path.display(),
            t.roi,
            t.subject
        );
    }
    let mut t = t;
    t.roi = roi;
    t.subject = subject;
    Ok(Some(t))
}

fn concat_responses(tensors: &[&ResponseTensor]) -> Result<ResponseTensor> {
    let first = tensors[0];
    let (videos, reps) = (first.n_videos(), first.n_reps());
    if tensors.iter().any(|t| t.n_videos() != videos || t.n_reps() != reps) {
        return Err(Error::validation("ROI tensors disagree on videos or repetitions"));
    }
    let total: usize = tensors.iter().map(|t| t.n_voxels()).sum();
    let mut data = Vec::with_capacity(videos * reps * total);
    for v in 0..videos {
        for r in 0..reps {
            for t in tensors {
                let k = t.n_voxels();
                let start = (v * reps + r) * k;
                data.extend_from_slice(&t.data()[start..start + k]);
            }
        }
    }
    let roi = if tensors.len() == 1 { first.roi } else { RoiName::WB };
    ResponseTensor::new(roi, first.subject, [videos, reps, total], data)
}

/// Scores (prediction, truth) pairs. Pairs of one subject are pooled into a
/// single report with one ROI per pair; with several subjects the per-subject
/// reports are averaged.
pub fn score_pairs(
    pairs: &[(PredictionMatrix, ResponseTensor)],
    opts: &ScoreOptions,
    meta: &ReportMeta,
) -> Result<(ScoreReport, Vec<ScoreReport>)> {
    if pairs.is_empty() {
        return Err(Error::validation("nothing to score"));
    }
    let mut by_subject: BTreeMap<u32, Vec<&(PredictionMatrix, ResponseTensor)>> = BTreeMap::new();
    for p in pairs {
        by_subject.entry(p.1.subject).or_default().push(p);
    }
    let mut reports = Vec::new();
    for (subject, group) in by_subject {
        let mut partition = RoiPartition::new();
        let mut offset = 0;
        for (pred, truth) in &group {
            if pred.data.shape() != (truth.n_videos(), truth.n_voxels()) {
                return Err(Error::validation(format!(
                    "prediction for {} is {:?}, truth is {} videos x {} voxels",
                    truth.roi,
                    pred.data.shape(),
                    truth.n_videos(),
                    truth.n_voxels()
                )));
            }
            if partition.insert(truth.roi, (offset..offset + truth.n_voxels()).collect()).is_some() {
                return Err(Error::validation(format!(
                    "ROI {} given twice for subject {subject}",
                    truth.roi
                )));
            }
            offset += truth.n_voxels();
        }
        let truths: Vec<&ResponseTensor> = group.iter().map(|p| &p.1).collect();
        let truth = concat_responses(&truths)?;
        let mut pred_data = DMatrix::zeros(truth.n_videos(), offset);
        let mut col = 0;
        for (pred, _) in &group {
            let k = pred.data.ncols();
            pred_data.columns_mut(col, k).copy_from(&pred.data);
            col += k;
        }
        let pred = PredictionMatrix::new(truth.roi, pred_data)?;
        let mut report = score_track(&pred, &truth, Some(&partition), opts)?;
        report.metadata = ReportMeta {
            subject: Some(subject),
            ..meta.clone()
        };
        reports.push(report);
    }
    let pooled = if reports.len() == 1 {
        reports[0].clone()
    } else {
        aggregate_subjects(&reports)?
    };
    Ok((pooled, reports))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::write(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::write(path, e))
}

fn model_meta(pairs: &[(&str, serde_json::Value)]) -> Metadata {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunOutputs {
    pub written: Vec<PathBuf>,
    pub selection: SelectionTable,
    pub report: Option<ScoreReport>,
}

/// Runs every stage. `provenance` describes the run and is stamped into a
/// manifest beside each output.
pub fn run_pipeline(cfg: &PipelineConfig, provenance: &Provenance) -> Result<RunOutputs> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    for sub in ["features", "reduced", "models", "predictions", "scores"] {
        create_dir(&out.join(sub))?;
    }
    let mut written = Vec::new();

    // aggregate and reduce each layer
    let mut train_sets = Vec::new();
    let mut test_sets = BTreeMap::new();
    for layer in &cfg.layers {
        let train_path = cfg.features_dir.join(format!("{layer}_train.vet"));
        let test_path = cfg.features_dir.join(format!("{layer}_test.vet"));
        let train = load_features(&train_path, cfg.frame_reducer, cfg.frames_per_video)?;
        let test = if test_path.exists() {
            Some(load_features(&test_path, cfg.frame_reducer, cfg.frames_per_video)?)
        } else {
            info!("{} not found; layer {layer} will not be predicted", test_path.display());
            None
        };
        for (split, set) in [("train", Some(&train)), ("test", test.as_ref())] {
            if let Some(set) = set {
                let p = out.join("features").join(format!("{layer}_{split}.vet"));
                tensorio::save(&p, set)?;
                written.push(p);
            }
        }

        let k = effective_components(cfg.pca_k, &train);
        let reduction = Reduction::fit(&train, k, cfg.standardize)?;
        let p = out.join("reduced").join(format!("{layer}_pca.vet"));
        tensorio::save(&p, &reduction.pca)?;
        written.push(p);
        if let Some(s) = &reduction.standardizer {
            let p = out.join("reduced").join(format!("{layer}_standardizer.vet"));
            tensorio::save(&p, s)?;
            written.push(p);
        }
        let train_r = reduction.apply(&train)?;
        let p = out.join("reduced").join(format!("{layer}_train.vet"));
        tensorio::save(&p, &train_r)?;
        written.push(p);
        if let Some(test) = test {
            let test_r = reduction.apply(&test)?;
            let p = out.join("reduced").join(format!("{layer}_test.vet"));
            tensorio::save(&p, &test_r)?;
            written.push(p);
            test_sets.insert(layer.clone(), test_r);
        }
        train_sets.push(train_r);
    }

    // responses per ROI and subject
    let mut train_responses: BTreeMap<RoiName, Vec<ResponseTensor>> = BTreeMap::new();
    let mut test_responses: BTreeMap<(u32, RoiName), ResponseTensor> = BTreeMap::new();
    for &roi in &cfg.rois {
        for &subject in &cfg.subjects {
            let t = load_responses(&cfg.responses_dir, subject, roi, "train")?.ok_or_else(|| {
                let p = cfg.responses_dir.join(response_file_name(subject, roi, "train"));
                Error::io(&p, std::io::Error::new(std::io::ErrorKind::NotFound, "response file not found"))
            })?;
            train_responses.entry(roi).or_default().push(t);
            if let Some(t) = load_responses(&cfg.responses_dir, subject, roi, "test")? {
                test_responses.insert((subject, roi), t);
            }
        }
    }

    // layer and family per ROI
    let n_train = train_sets[0].n_videos();
    let split = make_split(n_train, cfg.split_fraction, cfg.split_seed)?;
    let selection = select_layer_per_roi(&train_sets, &train_responses, &split, &cfg.select_config())?;
    let p = out.join("selection.csv");
    selection.write_csv(&p)?;
    written.push(p);
    let p = out.join("selection.json");
    selection.write_json(&p)?;
    written.push(p);

    // refit the chosen candidate on all training videos, then predict
    let mut pairs = Vec::new();
    let mut notes = BTreeMap::new();
    for row in selection.chosen_rows() {
        notes.insert(format!("layer.{}", row.roi), row.layer.clone());
        notes.insert(format!("family.{}", row.roi), row.family.to_string());
        notes.insert(format!("lambda.{}", row.roi), row.lambda.to_string());
        let layer_idx = cfg.layers.iter().position(|l| *l == row.layer).expect("selected from config layers");
        let x = &train_sets[layer_idx];
        let params = FamilyParams {
            lambda: row.lambda,
            alpha: row.alpha,
            ..cfg.family_params()
        };
        for t in &train_responses[&row.roi] {
            let model = fit_family(row.family, &x.data, &t.repetition_mean(), &params)?;
            let stem = format!("sub{:02}_{}", t.subject, row.roi);
            let meta = model_meta(&[
                ("roi", row.roi.as_str().into()),
                ("subject", t.subject.into()),
                ("layer", row.layer.clone().into()),
                ("model_name", cfg.model_name.clone().into()),
            ]);
            let p = out.join("models").join(format!("{stem}.vet"));
            model.save(&p, &meta)?;
            written.push(p);

            let Some(test_x) = test_sets.get(&row.layer) else { continue };
            let pred = PredictionMatrix::new(row.roi, model.predict(&test_x.data)?)?;
            let p = out.join("predictions").join(format!("{stem}_test.vet"));
            tensorio::save_with_meta(&p, &pred, &meta)?;
            written.push(p);
            if let Some(truth) = test_responses.get(&(t.subject, row.roi)) {
                pairs.push((pred, truth.clone()));
            }
        }
    }

    let report = if pairs.is_empty() {
        info!("no test responses found; skipping scoring");
        None
    } else {
        let meta = ReportMeta {
            model: cfg.model_name.clone(),
            layer: None,
            subject: None,
            seed: Some(cfg.split_seed),
            notes,
        };
        let (pooled, per_subject) = score_pairs(&pairs, &ScoreOptions::default(), &meta)?;
        if per_subject.len() > 1 {
            for r in &per_subject {
                let p = out.join("scores").join(format!("sub{:02}_report.json", r.metadata.subject.unwrap_or(0)));
                emit_report(r, ReportFormat::Json, &p)?;
                written.push(p);
            }
        }
        for (name, format) in [("report.json", ReportFormat::Json), ("summary.csv", ReportFormat::Csv)] {
            let p = out.join("scores").join(name);
            emit_report(&pooled, format, &p)?;
            written.push(p);
        }
        let p = out.join("scores").join("plotdata.csv");
        emit_plotdata(std::slice::from_ref(&pooled), &p)?;
        written.push(p);
        Some(pooled)
    };

    let p = out.join("config.resolved.json");
    write_json(&p, cfg)?;
    written.push(p);
    provenance.write_all(&written)?;
    Ok(RunOutputs {
        written,
        selection,
        report,
    })
}
