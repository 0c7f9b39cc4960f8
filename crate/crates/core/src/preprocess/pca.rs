use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{ensure_finite, Error, Result};
use crate::tensorio::vet::{meta_f64_vec, Metadata, VetCodec, VetTensor};
use crate::tensorio::FeatureSet;

/// Number of components kept by default.
pub const DEFAULT_COMPONENTS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    pub mean: DVector<f64>,
    /// `[k, features]`, orthonormal rows.
    pub components: DMatrix<f64>,
    /// Non-increasing, `sigma^2 / (n - 1)`.
    pub explained_variance: DVector<f64>,
}

impl PcaModel {
    pub fn k(&self) -> usize {
        self.components.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.components.ncols()
    }
}

/// Fits PCA by SVD of the centered training matrix.
///
/// Components are the top-`k` right singular vectors, each flipped so its
/// largest-magnitude entry is positive.
pub fn fit_pca(train: &FeatureSet, k: usize) -> Result<PcaModel> {
    let x = &train.data;
    let (n, d) = x.shape();
    if n < 2 {
        return Err(Error::validation(format!("PCA needs at least 2 videos, got {n}")));
    }
    if k == 0 || k > n.min(d) {
        return Err(Error::validation(format!(
            "PCA component count k={k} must satisfy 1 <= k <= min(videos, features) = {}",
            n.min(d)
        )));
    }
    ensure_finite(x.iter(), "PCA input")?;

    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let svd = SVD::try_new(centered, false, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::validation("SVD failed to converge"))?;
    let v_t = svd.v_t.expect("right singular vectors requested");

    let mut components = v_t.rows(0, k).into_owned();
    for mut row in components.row_iter_mut() {
        if row[largest_abs_index(row.iter())] < 0.0 {
            row.neg_mut();
        }
    }
    let explained_variance =
        DVector::from_iterator(k, svd.singular_values.iter().take(k).map(|s| s * s / (n - 1) as f64));
    Ok(PcaModel {
        mean,
        components,
        explained_variance,
    })
}

/// Index of the first entry with the largest magnitude.
fn largest_abs_index<'a>(values: impl Iterator<Item = &'a f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v.abs() > best.1 {
            best = (i, v.abs());
        }
    }
    best.0
}

/// Projects `x` onto the fitted components: `(x - mean) * components^T`.
pub fn transform_pca(model: &PcaModel, x: &FeatureSet) -> Result<FeatureSet> {
    if x.n_features() != model.n_features() {
        return Err(Error::validation(format!(
            "PCA was fit on {} features, input has {}",
            model.n_features(),
            x.n_features()
        )));
    }
    let mut centered = x.data.clone();
    for mut row in centered.row_iter_mut() {
        row -= model.mean.transpose();
    }
    Ok(x.with_data(centered * model.components.transpose()))
}

impl VetCodec for PcaModel {
    const KIND: &'static str = "pca";

    /// Row 0 is the mean, rows `1..=k` the components.
    fn to_vet(&self) -> Result<(VetTensor, Metadata)> {
        let mut stacked = DMatrix::zeros(self.k() + 1, self.n_features());
        stacked.row_mut(0).copy_from(&self.mean.transpose());
        stacked.rows_mut(1, self.k()).copy_from(&self.components);
        let mut meta = Metadata::new();
        meta.insert(
            "explained_variance".into(),
            self.explained_variance.iter().copied().collect::<Vec<_>>().into(),
        );
        Ok((VetTensor::from_matrix(&stacked), meta))
    }

    fn from_vet(tensor: VetTensor, meta: &Metadata) -> Result<Self> {
        let stacked = tensor.to_matrix()?;
        let explained = meta_f64_vec(meta, "explained_variance")?;
        if stacked.nrows() < 2 || explained.len() != stacked.nrows() - 1 {
            return Err(Error::format("PCA tensor and explained_variance disagree on k"));
        }
        Ok(PcaModel {
            mean: stacked.row(0).transpose(),
            components: stacked.rows(1, stacked.nrows() - 1).into_owned(),
            explained_variance: DVector::from_vec(explained),
        })
    }
}
