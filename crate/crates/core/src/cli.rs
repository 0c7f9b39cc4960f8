//! Command-line front end. Each stage is a subcommand that reads and writes
//! files; `run` chains them from a JSON config.
//!
//! Exit codes: 0 success, 1 validation or selection error, 2 I/O or format
//! error, 3 convergence error, 64 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::evaluate::{
    aggregate_subjects, emit_plotdata, emit_report, emit_summary, read_leaderboard, write_leaderboard,
    CeilingCorrection, Leaderboard, ReportFormat, ReportMeta, ScoreOptions, ScoreReport, SplitRule,
};
use crate::manifest::{has_manifest, manifest_path, Provenance};
use crate::modelselect::{
    cv_score, default_grid, make_folds, make_split, select_lambda, select_layer_per_roi, CvOptions, SelectConfig,
    DEFAULT_CV_FOLDS, DEFAULT_LAMBDA_RATIO, DEFAULT_N_LAMBDAS, DEFAULT_TRAIN_FRACTION,
};
use crate::pipeline::{load_features, run_pipeline, score_pairs, PipelineConfig, Reduction};
use crate::preprocess::{FrameReducer, PcaModel, Standardizer, DEFAULT_COMPONENTS};
use crate::regress::{
    fit_family, EncodingModel, Family, FamilyParams, FitOptions, LinearModel, ResModel, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
use crate::synth::{generate, SynthSpec};
use crate::tensorio::{
    self, vet::meta_str, FeatureSet, FrameFeatureTensor, PredictionMatrix, ResponseTensor, RoiName, VetCodec,
};

pub const WORKERS_ENV: &str = "VOXELCODE_WORKERS";
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "voxelcode", version, about = "Voxel-wise encoding models for video fMRI responses")]
struct Cli {
    /// Worker threads; defaults to $VOXELCODE_WORKERS, then to all cores.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Synth(SynthArgs),
    /// Collapse the frame axis of a frame tensor.
    Aggregate(AggregateArgs),
    /// Fit PCA (and z-scoring) on training features and apply it.
    Pca(PcaArgs),
    /// Fit one encoding model.
    Fit(FitArgs),
    /// Choose a layer and family per ROI on a train/validation split.
    Select(SelectArgs),
    /// Predict responses with a fitted model.
    Predict(PredictArgs),
    /// Score predictions against measured responses.
    Score(ScoreArgs),
    /// Re-emit score reports as summaries, plot data or a leaderboard.
    Report(ReportArgs),
    /// Check that files are well-formed VET tensors.
    Validate(ValidateArgs),
    /// Run the whole pipeline from a JSON config.
    Run(RunArgs),
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// JSON spec; flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    n_features: Option<usize>,
    #[arg(long)]
    n_voxels: Option<usize>,
    #[arg(long)]
    n_reps: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    signal_layer: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    roi: Option<RoiName>,
    #[arg(long)]
    subject: Option<u32>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    jitter: Option<f64>,
    #[arg(long)]
    ambient: Option<usize>,
    #[arg(long)]
    nonlinear: bool,
}

#[derive(Debug, Args, Serialize)]
struct AggregateArgs {
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "mean")]
    reducer: FrameReducer,
}

#[derive(Debug, Args, Serialize)]
struct PcaArgs {
    /// Training features (or frames, averaged).
    #[arg(long)]
    train: PathBuf,
    /// Further feature files to transform with the fitted model.
    #[arg(long)]
    apply: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_COMPONENTS)]
    k: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Debug, Args, Serialize)]
struct FitParamsArgs {
    /// Elastic-net mixing weight.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    /// Fit without an intercept.
    #[arg(long)]
    no_intercept: bool,
    #[arg(long, default_value_t = DEFAULT_CV_FOLDS)]
    cv_k: usize,
}

impl FitParamsArgs {
    fn family_params(&self) -> FamilyParams {
        FamilyParams {
            lambda: 0.0,
            alpha: self.alpha,
            tol: self.tol,
            max_iter: self.max_iter,
            opts: FitOptions {
                fit_intercept: !self.no_intercept,
            },
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct FitArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    responses: PathBuf,
    #[arg(long)]
    family: Family,
    /// Penalty strength; chosen by cross-validation when omitted.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    params: FitParamsArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct SelectArgs {
    /// Candidate layer features, in network order.
    #[arg(long, required = true)]
    features: Vec<PathBuf>,
    /// Response tensors; ROI and subject come from their metadata.
    #[arg(long, required = true)]
    responses: Vec<PathBuf>,
    #[arg(long = "family", default_values = ["lasso"])]
    families: Vec<Family>,
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    params: FitParamsArgs,
    /// `.csv` or `.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Defaults to the ROI recorded in the model file.
    #[arg(long)]
    roi: Option<RoiName>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum ScoreFormat {
    Csv,
    Json,
    Plotdata,
}

#[derive(Debug, Args, Serialize)]
struct ScoreArgs {
    /// Prediction files, paired in order with --truth.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    #[arg(long, required = true)]
    truth: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to json for a `.json` path, csv otherwise.
    #[arg(long)]
    format: Option<ScoreFormat>,
    /// Label for the report.
    #[arg(long, default_value = "model")]
    model: String,
    #[arg(long, default_value = "spearman-brown")]
    ceiling: CeilingCorrection,
    /// Average reliability over this many random halvings instead of first
    /// half versus second half.
    #[arg(long)]
    random_splits: Option<usize>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
enum ReportKind {
    Summary,
    Json,
    Plotdata,
    Leaderboard,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    /// Score reports (`.json`) or leaderboards (`.csv`).
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "summary")]
    format: ReportKind,
    /// Accept inputs without a manifest.
    #[arg(long)]
    force: bool,
}

#[derive(Debug, Args, Serialize)]
struct ValidateArgs {
    #[arg(required = true)]
    files: Vec<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation(_) | Error::Selection(_) => 1,
        Error::Io { .. } | Error::Write { .. } | Error::Format(_) => 2,
        Error::Convergence(_) => 3,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn worker_count(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return Ok(n);
    }
    match std::env::var(WORKERS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::validation(format!("{WORKERS_ENV}={v:?} is not a worker count"))),
        Err(_) => Ok(0),
    }
}

fn execute(cli: Cli) -> Result<()> {
    let workers = worker_count(cli.workers)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::validation(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| match cli.command {
        Command::Synth(a) => synth(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Pca(a) => pca(a),
        Command::Fit(a) => fit(a),
        Command::Select(a) => select(a),
        Command::Predict(a) => predict(a),
        Command::Score(a) => score(a),
        Command::Report(a) => report(a),
        Command::Validate(a) => validate(a),
        Command::Run(a) => run(a),
    })
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| Error::write(dir, e))
        }
        _ => Ok(()),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", p.display())))?
        }
        None => SynthSpec::new(500, 100, 50, 100, 1.0, 0),
    };
    macro_rules! set {
        ($($field:ident <- $flag:ident),*) => {$(
            if let Some(v) = a.$flag { spec.$field = v; }
        )*};
    }
    set!(n_train <- n_train, n_test <- n_test, n_features <- n_features, n_voxels <- n_voxels,
         n_reps <- n_reps, noise_std <- noise_std, n_layers <- n_layers, signal_layer <- signal_layer,
         seed <- seed, roi <- roi, subject <- subject, frames_per_video <- frames, frame_jitter <- jitter);
    if a.ambient.is_some() {
        spec.ambient_features = a.ambient;
    }
    spec.nonlinear |= a.nonlinear;

    let bundle = generate(&spec)?;
    let written = bundle.save(&a.out)?;
    let mut prov = Provenance::new("synth", &spec)?.seed("synth", spec.seed);
    if let Some(p) = &a.spec {
        prov.input(p)?;
    }
    prov.write_all(&written)?;
    println!("wrote {} files to {}", written.len(), a.out.display());
    Ok(())
}

fn aggregate(a: AggregateArgs) -> Result<()> {
    let frames: FrameFeatureTensor = tensorio::load(&a.frames)?;
    let features = crate::preprocess::aggregate_frames_with(&frames, a.reducer)?;
    create_parent(&a.out)?;
    tensorio::save(&a.out, &features)?;
    let mut prov = Provenance::new("aggregate", &a)?;
    prov.input(&a.frames)?;
    prov.write(&a.out)?;
    Ok(())
}

fn pca(a: PcaArgs) -> Result<()> {
    if a.k < 1 {
        return Err(Error::validation(format!("--k must be >= 1, got {}", a.k)));
    }
    let train = load_features(&a.train, FrameReducer::Mean, None)?;
    let reduction = Reduction::fit(&train, a.k, !a.no_standardize)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::write(&a.out, e))?;

    let mut written = Vec::new();
    let p = a.out.join("pca.vet");
    tensorio::save(&p, &reduction.pca)?;
    written.push(p);
    if let Some(s) = &reduction.standardizer {
        let p = a.out.join("standardizer.vet");
        tensorio::save(&p, s)?;
        written.push(p);
    }
    let mut inputs = vec![a.train.clone()];
    inputs.extend(a.apply.iter().cloned());
    for input in &inputs {
        let name = input
            .file_name()
            .ok_or_else(|| Error::validation(format!("{} has no file name", input.display())))?;
        let p = a.out.join(name);
        if written.contains(&p) {
            return Err(Error::validation(format!("two inputs would both be written to {}", p.display())));
        }
        let x = if input == &a.train { train.clone() } else { load_features(input, FrameReducer::Mean, None)? };
        tensorio::save(&p, &reduction.apply(&x)?)?;
        written.push(p);
    }
    let mut prov = Provenance::new("pca", &a)?;
    prov.inputs(&inputs)?;
    prov.write_all(&written)?;
    Ok(())
}

fn fit(a: FitArgs) -> Result<()> {
    let x = load_features(&a.features, FrameReducer::Mean, None)?;
    let truth: ResponseTensor = tensorio::load(&a.responses)?;
    let y = truth.repetition_mean();
    let mut params = a.params.family_params();
    params.alpha = params.effective_alpha(a.family);
    if a.family.has_lambda() {
        params.lambda = match a.lambda {
            Some(l) => l,
            None => {
                let grid = default_grid(a.family, &x.data, &y, &params, DEFAULT_N_LAMBDAS, DEFAULT_LAMBDA_RATIO)?;
                let plan = make_folds(x.n_videos(), a.params.cv_k, a.seed)?;
                let cv = cv_score(&x.data, &y, a.family, &grid, &plan, &CvOptions { params })?;
                let l = select_lambda(&cv.lambdas, &cv.scores)?;
                info!("cross-validation chose lambda = {l}");
                l
            }
        };
    }
    let model = fit_family(a.family, &x.data, &y, &params)?;
    let meta = [
        ("roi".to_string(), truth.roi.as_str().into()),
        ("subject".to_string(), truth.subject.into()),
        ("layer".to_string(), x.layer_name.clone().into()),
        ("model_name".to_string(), x.model_name.clone().into()),
    ]
    .into_iter()
    .collect();
    create_parent(&a.out)?;
    model.save(&a.out, &meta)?;
    let mut prov = Provenance::new("fit", &a)?.seed("cv", a.seed);
    prov.inputs([&a.features, &a.responses])?;
    prov.write(&a.out)?;
    println!("{} lambda={} alpha={}", a.family, params.lambda, params.alpha);
    Ok(())
}

fn select(a: SelectArgs) -> Result<()> {
    let candidates = a
        .features
        .iter()
        .map(|p| load_features(p, FrameReducer::Mean, None))
        .collect::<Result<Vec<FeatureSet>>>()?;
    let mut responses = std::collections::BTreeMap::<RoiName, Vec<ResponseTensor>>::new();
    for p in &a.responses {
        let t: ResponseTensor = tensorio::load(p)?;
        responses.entry(t.roi).or_default().push(t);
    }
    let n = candidates[0].n_videos();
    let split = make_split(n, a.fraction, a.seed)?;
    let config = SelectConfig {
        families: a.families.clone(),
        params: a.params.family_params(),
        cv_folds: a.params.cv_k,
        cv_seed: a.seed,
        ..SelectConfig::default()
    };
    let table = select_layer_per_roi(&candidates, &responses, &split, &config)?;
    create_parent(&a.out)?;
    match a.out.extension().and_then(|e| e.to_str()) {
        Some("json") => table.write_json(&a.out)?,
        _ => table.write_csv(&a.out)?,
    }
    let mut prov = Provenance::new("select", &a)?.seed("split", a.seed).seed("cv", a.seed);
    prov.inputs(a.features.iter().chain(&a.responses))?;
    prov.write(&a.out)?;
    for row in table.chosen_rows() {
        println!("{} {} {} lambda={} val={}", row.roi, row.layer, row.family, row.lambda, row.val_score);
    }
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let (model, meta) = EncodingModel::load(&a.model)?;
    let x = load_features(&a.features, FrameReducer::Mean, None)?;
    let roi = match a.roi {
        Some(r) => r,
        None => meta_str(&meta, "roi").ok().and_then(|s| s.parse().ok()).unwrap_or(RoiName::WB),
    };
    let pred = PredictionMatrix::new(roi, model.predict(&x.data)?)?;
    create_parent(&a.out)?;
    tensorio::save(&a.out, &pred)?;
    let mut prov = Provenance::new("predict", &a)?;
    prov.inputs([&a.model, &a.features])?;
    prov.write(&a.out)?;
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    if a.pred.len() != a.truth.len() {
        return Err(Error::validation(format!(
            "{} --pred files but {} --truth files",
            a.pred.len(),
            a.truth.len()
        )));
    }
    let pairs = a
        .pred
        .iter()
        .zip(&a.truth)
        .map(|(p, t)| {
            let pred: PredictionMatrix = tensorio::load(p)?;
            let truth: ResponseTensor = tensorio::load(t)?;
            Ok((pred, truth))
        })
        .collect::<Result<Vec<_>>>()?;
    let opts = ScoreOptions {
        split_rule: match a.random_splits {
            Some(n_splits) => SplitRule::RandomSplits {
                n_splits,
                seed: a.split_seed,
            },
            None => SplitRule::FirstHalf,
        },
        ceiling: a.ceiling,
    };
    let meta = ReportMeta {
        model: a.model.clone(),
        ..ReportMeta::default()
    };
    let (pooled, _) = score_pairs(&pairs, &opts, &meta)?;
    let format = match a.format {
        Some(ScoreFormat::Csv) => ReportFormat::Csv,
        Some(ScoreFormat::Json) => ReportFormat::Json,
        Some(ScoreFormat::Plotdata) => ReportFormat::PlotData,
        None if a.out.extension().is_some_and(|e| e == "json") => ReportFormat::Json,
        None => ReportFormat::Csv,
    };
    create_parent(&a.out)?;
    emit_report(&pooled, format, &a.out)?;
    let mut prov = Provenance::new("score", &a)?.seed("split", a.split_seed);
    prov.inputs(a.pred.iter().chain(&a.truth))?;
    prov.write(&a.out)?;
    println!("track {}", pooled.track_score());
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let mut reports = Vec::new();
    let mut board = Leaderboard::default();
    for p in &a.inputs {
        if !a.force && !has_manifest(p) {
            return Err(Error::validation(format!(
                "{} has no manifest ({}); pass --force to accept it",
                p.display(),
                manifest_path(p).display()
            )));
        }
        if p.extension().is_some_and(|e| e == "json") {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let r: ScoreReport =
                serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", p.display())))?;
            board.rows.extend(Leaderboard::from_reports(std::slice::from_ref(&r)).rows);
            reports.push(r);
        } else {
            board.rows.extend(read_leaderboard(p)?.rows);
        }
    }
    let need_reports = !matches!(a.format, ReportKind::Leaderboard);
    if need_reports && reports.is_empty() {
        return Err(Error::validation("this format needs at least one score report (.json) input"));
    }
    create_parent(&a.out)?;
    match a.format {
        ReportKind::Summary => emit_summary(&reports, &a.out)?,
        ReportKind::Json => {
            let pooled = if reports.len() == 1 { reports[0].clone() } else { aggregate_subjects(&reports)? };
            emit_report(&pooled, ReportFormat::Json, &a.out)?
        }
        ReportKind::Plotdata => emit_plotdata(&reports, &a.out)?,
        ReportKind::Leaderboard => write_leaderboard(&board, &a.out)?,
    }
    let mut prov = Provenance::new("report", &a)?;
    prov.inputs(&a.inputs)?;
    prov.write(&a.out)?;
    Ok(())
}

fn describe(path: &Path) -> Result<String> {
    let (tensor, meta) = tensorio::read_tensor(path)?;
    let shape = tensor.shape.clone();
    let kind = meta.get("kind").and_then(|k| k.as_str()).unwrap_or("untyped").to_string();
    match kind.as_str() {
        ResponseTensor::KIND => drop(ResponseTensor::from_vet(tensor, &meta)?),
        FeatureSet::KIND => drop(FeatureSet::from_vet(tensor, &meta)?),
        FrameFeatureTensor::KIND => drop(FrameFeatureTensor::from_vet(tensor, &meta)?),
        PredictionMatrix::KIND => drop(PredictionMatrix::from_vet(tensor, &meta)?),
        PcaModel::KIND => drop(PcaModel::from_vet(tensor, &meta)?),
        Standardizer::KIND => drop(Standardizer::from_vet(tensor, &meta)?),
        LinearModel::KIND => drop(LinearModel::from_vet(tensor, &meta)?),
        ResModel::KIND => drop(ResModel::from_vet(tensor, &meta)?),
        _ => {}
    }
    Ok(format!("{}: ok {kind} {shape:?}", path.display()))
}

fn validate(a: ValidateArgs) -> Result<()> {
    let mut first_err = None;
    for p in &a.files {
        match describe(p) {
            Ok(line) => println!("{line}"),
            Err(e) => {
                println!("{}: {e}", p.display());
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = PipelineConfig::load(&a.config)?;
    if let Some(dir) = &a.output_dir {
        cfg.output_dir = dir.clone();
    }
    // the worker count never changes results, so it stays out of the hash
    let mut hashed = cfg.clone();
    hashed.workers = None;
    hashed.output_dir = PathBuf::new();
    let mut prov = Provenance::new("run", &hashed)?
        .seed("split", cfg.split_seed)
        .seed("cv", cfg.cv_seed.unwrap_or(cfg.split_seed));
    prov.input(&a.config)?;
    let outputs = match cfg.workers {
        Some(n) if n > 0 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::validation(format!("cannot start {n} workers: {e}")))?
            .install(|| run_pipeline(&cfg, &prov))?,
        _ => run_pipeline(&cfg, &prov)?,
    };
    for row in outputs.selection.chosen_rows() {
        println!("{} {} {} lambda={} val={}", row.roi, row.layer, row.family, row.lambda, row.val_score);
    }
    if let Some(r) = &outputs.report {
        println!("track {}", r.track_score());
    }
    Ok(())
}
