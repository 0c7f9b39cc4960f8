//! Representational similarity encoding: a test item's response is the
//! average of training responses weighted by rectified Pearson similarity
//! between feature rows.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::linear::check_xy;
use crate::error::{ensure_finite, Error, Result};
use crate::tensorio::vet::{meta_u64, Metadata, VetCodec, VetTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Similarity {
    /// `max(0, pearson(x_test, x_train))`
    #[default]
    PearsonRectified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResModel {
    pub train_features: DMatrix<f64>,
    pub train_responses: DMatrix<f64>,
    pub similarity: Similarity,
}

impl ResModel {
    pub fn n_features(&self) -> usize {
        self.train_features.ncols()
    }

    pub fn n_voxels(&self) -> usize {
        self.train_responses.ncols()
    }
}

pub fn fit_res(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<ResModel> {
    if x.nrows() == 1 && y.nrows() == 1 {
        ensure_finite(x.iter(), "design matrix")?;
        ensure_finite(y.iter(), "response matrix")?;
    } else if x.nrows() == 0 {
        return Err(Error::validation("RES needs at least one training item"));
    } else {
        check_xy(x, y)?;
    }
    Ok(ResModel {
        train_features: x.clone(),
        train_responses: y.clone(),
        similarity: Similarity::PearsonRectified,
    })
}

/// Centers a row and scales it to unit norm; `None` for a constant row.
fn unit_centered(row: impl Iterator<Item = f64> + Clone) -> Option<Vec<f64>> {
    let n = row.clone().count() as f64;
    let mean = row.clone().sum::<f64>() / n;
    let centered: Vec<f64> = row.map(|v| v - mean).collect();
    let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
    let scale = centered.iter().fold(0.0f64, |a, v| a.max(v.abs())) + mean.abs();
    if norm <= f64::EPSILON * scale * n.sqrt() || norm == 0.0 {
        return None;
    }
    Some(centered.into_iter().map(|v| v / norm).collect())
}

pub fn predict_res(m: &ResModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != m.n_features() {
        return Err(Error::validation(format!(
            "RES model expects {} features, input has {}",
            m.n_features(),
            x.ncols()
        )));
    }
    ensure_finite(x.iter(), "RES input")?;
    let train: Vec<Option<Vec<f64>>> = m
        .train_features
        .row_iter()
        .map(|r| unit_centered(r.iter().copied()))
        .collect();
    let fallback: DVector<f64> = m.train_responses.row_mean().transpose();

    let rows: Vec<DVector<f64>> = (0..x.nrows())
        .into_par_iter()
        .map(|t| {
            let Some(test) = unit_centered(x.row(t).iter().copied()) else {
                log::warn!("RES test row {t} is constant; predicting the training mean");
                return fallback.clone();
            };
            let mut total = 0.0;
            let mut acc = DVector::zeros(m.n_voxels());
            for (i, item) in train.iter().enumerate() {
                let Some(item) = item else { continue };
                let r: f64 = test.iter().zip(item).map(|(a, b)| a * b).sum();
                let s = r.clamp(-1.0, 1.0).max(0.0);
                if s > 0.0 {
                    acc.axpy(s, &m.train_responses.row(i).transpose(), 1.0);
                    total += s;
                }
            }
            if total > 0.0 {
                acc / total
            } else {
                fallback.clone()
            }
        })
        .collect();
    Ok(DMatrix::from_fn(x.nrows(), m.n_voxels(), |t, k| rows[t][k]))
}

impl VetCodec for ResModel {
    const KIND: &'static str = "res_model";

    /// `[n_train, features + voxels]`: feature columns first.
    fn to_vet(&self) -> Result<(VetTensor, Metadata)> {
        let (n, d) = self.train_features.shape();
        let mut stacked = DMatrix::zeros(n, d + self.n_voxels());
        stacked.columns_mut(0, d).copy_from(&self.train_features);
        stacked.columns_mut(d, self.n_voxels()).copy_from(&self.train_responses);
        let mut meta = Metadata::new();
        meta.insert("family".into(), "res".into());
        meta.insert("similarity".into(), "pearson_rectified".into());
        meta.insert("n_features".into(), d.into());
        Ok((VetTensor::from_matrix(&stacked), meta))
    }

    fn from_vet(tensor: VetTensor, meta: &Metadata) -> Result<Self> {
        let stacked = tensor.to_matrix()?;
        let d = meta_u64(meta, "n_features")? as usize;
        if d > stacked.ncols() {
            return Err(Error::format("RES n_features exceeds stored columns"));
        }
        Ok(ResModel {
            train_features: stacked.columns(0, d).into_owned(),
            train_responses: stacked.columns(d, stacked.ncols() - d).into_owned(),
            similarity: Similarity::PearsonRectified,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let sab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let saa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn single_matching_item() {
        // item 0 matches the test row; items 1, 2 are anti-correlated with it
        let x = DMatrix::from_row_slice(3, 3, &[1., 2., 3., 3., 2., 1., 3., 2.5, 1.]);
        let y = DMatrix::from_row_slice(3, 2, &[10., 20., -5., 7., 4., 4.]);
        let m = fit_res(&x, &y).unwrap();
        let p = predict_res(&m, &DMatrix::from_row_slice(1, 3, &[1., 2., 3.])).unwrap();
        assert!((p[(0, 0)] - 10.0).abs() < 1e-12 && (p[(0, 1)] - 20.0).abs() < 1e-12);
    }

    #[test]
    fn two_equal_items_average() {
        let x = DMatrix::from_row_slice(3, 3, &[1., 2., 3., 2., 4., 6., 3., 2., 1.]);
        let y = DMatrix::from_row_slice(3, 1, &[1., 3., 100.]);
        let m = fit_res(&x, &y).unwrap();
        let p = predict_res(&m, &DMatrix::from_row_slice(1, 3, &[0., 1., 2.])).unwrap();
        assert!((p[(0, 0)] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn matches_weighted_average_oracle() {
        let mut s = Stream::new(51);
        let x = DMatrix::from_fn(5, 6, |_, _| s.standard_normal());
        let y = DMatrix::from_fn(5, 3, |_, _| s.standard_normal());
        let t = DMatrix::from_fn(4, 6, |_, _| s.standard_normal());
        let p = predict_res(&fit_res(&x, &y).unwrap(), &t).unwrap();
        for r in 0..4 {
            let tr: Vec<f64> = t.row(r).iter().copied().collect();
            let w: Vec<f64> = (0..5)
                .map(|i| pearson(&tr, &x.row(i).iter().copied().collect::<Vec<_>>()).max(0.0))
                .collect();
            let total: f64 = w.iter().sum();
            for k in 0..3 {
                let expected = if total > 0.0 {
                    (0..5).map(|i| w[i] * y[(i, k)]).sum::<f64>() / total
                } else {
                    y.column(k).mean()
                };
                assert!((p[(r, k)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn constant_test_row_falls_back_to_mean() {
        let x = DMatrix::from_row_slice(2, 3, &[1., 2., 3., 0., 5., 1.]);
        let y = DMatrix::from_row_slice(2, 1, &[2., 4.]);
        let p = predict_res(&fit_res(&x, &y).unwrap(), &DMatrix::from_element(1, 3, 7.0)).unwrap();
        assert_eq!(p[(0, 0)], 3.0);
    }

    #[test]
    fn predictions_are_convex_combinations() {
        let mut s = Stream::new(52);
        let x = DMatrix::from_fn(30, 8, |_, _| s.standard_normal());
        let y = DMatrix::from_fn(30, 5, |_, _| s.standard_normal());
        let p = predict_res(&fit_res(&x, &y).unwrap(), &DMatrix::from_fn(20, 8, |_, _| s.standard_normal())).unwrap();
        for k in 0..5 {
            let (lo, hi) = (y.column(k).min(), y.column(k).max());
            assert!(p.column(k).iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }
    }

    #[test]
    fn feature_count_mismatch() {
        let m = fit_res(&DMatrix::zeros(3, 4), &DMatrix::zeros(3, 1)).unwrap();
        assert!(matches!(predict_res(&m, &DMatrix::zeros(1, 3)), Err(Error::Validation(_))));
    }
}
