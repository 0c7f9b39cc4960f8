use nalgebra::{DMatrix, DVector};

use crate::error::{ensure_finite, Error, Result};
use crate::tensorio::vet::{Metadata, VetCodec, VetTensor};

/// Columns whose population std falls below this are treated as constant.
pub const CONSTANT_STD: f64 = 1e-12;

/// Per-column z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    /// Population standard deviation (divides by n).
    pub std: DVector<f64>,
}

impl Standardizer {
    pub fn is_constant(&self, col: usize) -> bool {
        self.std[col] < CONSTANT_STD
    }

    pub fn constant_columns(&self) -> Vec<usize> {
        (0..self.std.len()).filter(|&j| self.is_constant(j)).collect()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        apply_standardizer(self, x)
    }
}

pub fn fit_standardizer(train: &DMatrix<f64>) -> Result<Standardizer> {
    let n = train.nrows();
    if n < 2 {
        return Err(Error::validation(format!("standardizer needs at least 2 rows, got {n}")));
    }
    ensure_finite(train.iter(), "standardizer input")?;
    let mean = train.row_mean().transpose();
    let std = DVector::from_iterator(
        train.ncols(),
        train.column_iter().zip(mean.iter()).map(|(col, &mu)| {
            (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64).sqrt()
        }),
    );
    Ok(Standardizer { mean, std })
}

/// Constant columns map to zero.
pub fn apply_standardizer(s: &Standardizer, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != s.mean.len() {
        return Err(Error::validation(format!(
            "standardizer was fit on {} columns, input has {}",
            s.mean.len(),
            x.ncols()
        )));
    }
    ensure_finite(x.iter(), "standardizer input")?;
    Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        if s.is_constant(j) {
            0.0
        } else {
            (x[(i, j)] - s.mean[j]) / s.std[j]
        }
    }))
}

impl VetCodec for Standardizer {
    const KIND: &'static str = "standardizer";

    /// Row 0 holds the means, row 1 the standard deviations.
    fn to_vet(&self) -> Result<(VetTensor, Metadata)> {
        let mut stacked = DMatrix::zeros(2, self.mean.len());
        stacked.row_mut(0).copy_from(&self.mean.transpose());
        stacked.row_mut(1).copy_from(&self.std.transpose());
        Ok((VetTensor::from_matrix(&stacked), Metadata::new()))
    }

    fn from_vet(tensor: VetTensor, _meta: &Metadata) -> Result<Self> {
        let stacked = tensor.to_matrix()?;
        if stacked.nrows() != 2 {
            return Err(Error::format("standardizer tensor must have 2 rows"));
        }
        Ok(Standardizer {
            mean: stacked.row(0).transpose(),
            std: stacked.row(1).transpose(),
        })
    }
}
