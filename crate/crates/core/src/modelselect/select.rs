use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cv::{cv_score, default_grid, mean_voxel_correlation, select_lambda, CvOptions};
use super::cv::{DEFAULT_LAMBDA_RATIO, DEFAULT_N_LAMBDAS};
use super::split::{make_folds, SplitPlan, DEFAULT_CV_FOLDS};
use crate::error::{Error, Result};
use crate::regress::{fit_family, Family, FamilyParams};
use crate::tensorio::{FeatureSet, ResponseTensor, RoiName};

#[derive(Debug, Clone, PartialEq)]
pub struct SelectConfig {
    /// Families tried for every layer, in tie-break order.
    pub families: Vec<Family>,
    pub params: FamilyParams,
    pub cv_folds: usize,
    pub cv_seed: u64,
    /// Fixed grid for every penalized family; otherwise each family gets its
    /// default grid.
    pub lambda_grid: Option<Vec<f64>>,
    pub n_lambdas: usize,
    pub lambda_ratio: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            families: vec![Family::Ridge],
            params: FamilyParams::default(),
            cv_folds: DEFAULT_CV_FOLDS,
            cv_seed: 0,
            lambda_grid: None,
            n_lambdas: DEFAULT_N_LAMBDAS,
            lambda_ratio: DEFAULT_LAMBDA_RATIO,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub roi: RoiName,
    pub model: String,
    pub layer: String,
    pub family: Family,
    pub lambda: f64,
    pub alpha: f64,
    /// Validation score averaged over subjects, in `[-1, 1]`.
    pub val_score: f64,
    pub chosen: bool,
}

/// One row per (ROI, layer, family) candidate, ROIs in order, candidates in
/// the order they were supplied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SelectionTable {
    pub rows: Vec<SelectionRow>,
}

impl SelectionTable {
    pub fn chosen(&self, roi: RoiName) -> Option<&SelectionRow> {
        self.rows.iter().find(|r| r.roi == roi && r.chosen)
    }

    pub fn chosen_rows(&self) -> impl Iterator<Item = &SelectionRow> {
        self.rows.iter().filter(|r| r.chosen)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeMap::new();
        for r in self.chosen_rows() {
            if seen.insert(r.roi, ()).is_some() {
                return Err(Error::format(format!("ROI {} has more than one chosen row", r.roi)));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::write(path, e.into()))?;
        for row in &self.rows {
            w.serialize(row).map_err(|e| Error::write(path, e.into()))?;
        }
        if self.rows.is_empty() {
            w.write_record(["roi", "model", "layer", "family", "lambda", "alpha", "val_score", "chosen"])
                .map_err(|e| Error::write(path, e.into()))?;
        }
        w.flush().map_err(|e| Error::write(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, e.into()))?;
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<SelectionRow>, _>>()
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        let table = SelectionTable { rows };
        table.validate()?;
        Ok(table)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::format(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::write(path, e))
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: SelectionTable =
            serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        table.validate()?;
        Ok(table)
    }

    /// Reads either format, by extension.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::read_json(path),
            _ => Self::read_csv(path),
        }
    }
}

struct Subject {
    y_train: DMatrix<f64>,
    y_val: DMatrix<f64>,
}

fn candidate_row(
    roi: RoiName,
    features: &FeatureSet,
    family: Family,
    subjects: &[Subject],
    split: &SplitPlan,
    config: &SelectConfig,
) -> Result<SelectionRow> {
    let x_train = features.data.select_rows(&split.train_indices);
    let x_val = features.data.select_rows(&split.val_indices);
    let mut params = config.params;
    params.alpha = params.effective_alpha(family);

    if family.has_lambda() {
        let grid = match &config.lambda_grid {
            Some(g) => g.clone(),
            None => {
                // one grid for all subjects, anchored at the largest lambda_max
                let mut best: Option<Vec<f64>> = None;
                for s in subjects {
                    let g = default_grid(family, &x_train, &s.y_train, &params, config.n_lambdas, config.lambda_ratio)?;
                    if best.as_ref().is_none_or(|b| g[0] > b[0]) {
                        best = Some(g);
                    }
                }
                best.expect("at least one subject")
            }
        };
        let plan = make_folds(split.train_indices.len(), config.cv_folds, config.cv_seed)?;
        let options = CvOptions { params };
        let mut mean = vec![0.0; grid.len()];
        for s in subjects {
            let cv = cv_score(&x_train, &s.y_train, family, &grid, &plan, &options)?;
            for (m, v) in mean.iter_mut().zip(&cv.scores) {
                *m += v / subjects.len() as f64;
            }
        }
        params.lambda = select_lambda(&grid, &mean)?;
    }

    let mut val_score = 0.0;
    for s in subjects {
        let model = fit_family(family, &x_train, &s.y_train, &params)?;
        let (score, _) = mean_voxel_correlation(&model.predict(&x_val)?, &s.y_val)?;
        val_score += score / subjects.len() as f64;
    }
    Ok(SelectionRow {
        roi,
        model: features.model_name.clone(),
        layer: features.layer_name.clone(),
        family,
        lambda: if family.has_lambda() { params.lambda } else { 0.0 },
        alpha: params.alpha,
        val_score,
        chosen: false,
    })
}

/// For every ROI, fits each (layer, family) candidate on the training side
/// of `split` with lambda chosen by inner cross-validation, scores it on
/// the validation side against repetition-averaged responses, and marks the
/// best. Ties keep the earliest layer, then the earliest family.
///
/// `responses` maps each ROI to one tensor per subject; every tensor must
/// cover the same training videos as the features.
pub fn select_layer_per_roi(
    candidates: &[FeatureSet],
    responses: &BTreeMap<RoiName, Vec<ResponseTensor>>,
    split: &SplitPlan,
    config: &SelectConfig,
) -> Result<SelectionTable> {
    if candidates.is_empty() {
        return Err(Error::validation("no candidate layers"));
    }
    if config.families.is_empty() {
        return Err(Error::validation("no model families to try"));
    }
    split.check_partition()?;
    let n = split.n();
    for c in candidates {
        if c.n_videos() != n {
            return Err(Error::validation(format!(
                "layer {} has {} videos but the split covers {n}",
                c.layer_name,
                c.n_videos()
            )));
        }
    }

    let mut prepared: Vec<(RoiName, Vec<Subject>)> = Vec::new();
    for (&roi, tensors) in responses {
        if tensors.is_empty() || tensors.iter().all(|t| t.n_voxels() == 0) {
            warn!("ROI {roi} has no voxels; skipped");
            continue;
        }
        let mut subjects = Vec::new();
        for t in tensors {
            if t.n_videos() != n {
                return Err(Error::validation(format!(
                    "ROI {roi} subject {} has {} videos but the split covers {n}",
                    t.subject,
                    t.n_videos()
                )));
            }
            if t.n_voxels() == 0 {
                warn!("ROI {roi} subject {} has no voxels; skipped", t.subject);
                continue;
            }
            let y = t.repetition_mean();
            subjects.push(Subject {
                y_train: y.select_rows(&split.train_indices),
                y_val: y.select_rows(&split.val_indices),
            });
        }
        prepared.push((roi, subjects));
    }

    let jobs: Vec<(usize, &FeatureSet, Family)> = (0..prepared.len())
        .flat_map(|r| {
            candidates
                .iter()
                .flat_map(move |c| config.families.iter().map(move |&f| (r, c, f)))
        })
        .collect();
    let results: Vec<Result<SelectionRow>> = jobs
        .par_iter()
        .map(|&(r, features, family)| {
            let (roi, subjects) = &prepared[r];
            candidate_row(*roi, features, family, subjects, split, config)
        })
        .collect();
    let mut rows = results.into_iter().collect::<Result<Vec<_>>>()?;

    let per_roi = candidates.len() * config.families.len();
    for block in rows.chunks_mut(per_roi) {
        let mut best = 0;
        for (i, row) in block.iter().enumerate() {
            if row.val_score > block[best].val_score {
                best = i;
            }
        }
        block[best].chosen = true;
    }
    Ok(SelectionTable { rows })
}
