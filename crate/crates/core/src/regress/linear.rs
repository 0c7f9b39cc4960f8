use nalgebra::{Cholesky, DMatrix, DVector, SVD};

use super::Family;
use crate::error::{ensure_finite, Error, Result};
use crate::tensorio::vet::{meta_f64, meta_str, Metadata, VetCodec, VetTensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Center X and Y and fit an unpenalized intercept. When false the
    /// problem is solved on the raw matrices and the intercept is zero.
    pub fit_intercept: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions { fit_intercept: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// `[features, voxels]`
    pub weights: DMatrix<f64>,
    pub intercept: DVector<f64>,
    pub family: Family,
    pub lambda: f64,
    pub alpha: f64,
    /// Coordinate-descent tolerance, when one was used.
    pub tol: Option<f64>,
    /// Largest KKT residual over voxels, for coordinate-descent fits.
    pub kkt_residual: Option<f64>,
}

impl LinearModel {
    pub fn n_features(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_voxels(&self) -> usize {
        self.weights.ncols()
    }
}

/// Centered copies of a design and its targets.
pub(super) struct Centered {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub x_mean: DVector<f64>,
    pub y_mean: DVector<f64>,
}

impl Centered {
    pub fn new(x: &DMatrix<f64>, y: &DMatrix<f64>, opts: &FitOptions) -> Result<Self> {
        check_xy(x, y)?;
        if !opts.fit_intercept {
            return Ok(Centered {
                x: x.clone(),
                y: y.clone(),
                x_mean: DVector::zeros(x.ncols()),
                y_mean: DVector::zeros(y.ncols()),
            });
        }
        let x_mean = x.row_mean().transpose();
        let y_mean = y.row_mean().transpose();
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            row -= x_mean.transpose();
        }
        let mut yc = y.clone();
        for mut row in yc.row_iter_mut() {
            row -= y_mean.transpose();
        }
        Ok(Centered {
            x: xc,
            y: yc,
            x_mean,
            y_mean,
        })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn intercept(&self, weights: &DMatrix<f64>) -> DVector<f64> {
        &self.y_mean - weights.transpose() * &self.x_mean
    }
}

pub(super) fn check_xy(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<()> {
    if x.nrows() != y.nrows() {
        return Err(Error::validation(format!(
            "design has {} rows, responses have {}",
            x.nrows(),
            y.nrows()
        )));
    }
    if x.nrows() < 2 {
        return Err(Error::validation(format!(
            "need at least 2 samples, got {}",
            x.nrows()
        )));
    }
    ensure_finite(x.iter(), "design matrix")?;
    ensure_finite(y.iter(), "response matrix")
}

/// Minimum-norm least squares for every voxel column.
pub fn fit_ols(x: &DMatrix<f64>, y: &DMatrix<f64>, opts: &FitOptions) -> Result<LinearModel> {
    let c = Centered::new(x, y, opts)?;
    let (n, d) = c.x.shape();
    let svd = SVD::try_new(c.x.clone(), true, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::validation("SVD of the design failed to converge"))?;
    let sigma_max = svd.singular_values.max();
    let cutoff = sigma_max * f64::EPSILON * n.max(d) as f64;
    let weights = svd.solve(&c.y, cutoff).map_err(|e| Error::validation(e.to_string()))?;
    Ok(LinearModel {
        intercept: c.intercept(&weights),
        weights,
        family: Family::Ols,
        lambda: 0.0,
        alpha: 0.0,
        tol: None,
        kkt_residual: None,
    })
}

/// Closed-form ridge: `(XᵀX + nλI) W = XᵀY` on centered data, one Cholesky
/// factorization shared by all voxel columns.
pub fn fit_ridge(x: &DMatrix<f64>, y: &DMatrix<f64>, lambda: f64, opts: &FitOptions) -> Result<LinearModel> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::validation(format!(
            "ridge needs a finite lambda > 0, got {lambda} (use OLS for lambda = 0)"
        )));
    }
    let c = Centered::new(x, y, opts)?;
    let n = c.n() as f64;
    let xt = c.x.transpose();
    let mut gram = &xt * &c.x;
    for j in 0..gram.nrows() {
        gram[(j, j)] += n * lambda;
    }
    let rhs = &xt * &c.y;
    let chol = Cholesky::new(gram)
        .ok_or_else(|| Error::validation("ridge system is not positive definite"))?;
    let weights = chol.solve(&rhs);
    Ok(LinearModel {
        intercept: c.intercept(&weights),
        weights,
        family: Family::Ridge,
        lambda,
        alpha: 0.0,
        tol: None,
        kkt_residual: None,
    })
}

/// `X · weights + intercept`, one row per input row.
pub fn predict_linear(m: &LinearModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != m.n_features() {
        return Err(Error::validation(format!(
            "model expects {} features, input has {}",
            m.n_features(),
            x.ncols()
        )));
    }
    let mut out = x * &m.weights;
    for mut row in out.row_iter_mut() {
        row += m.intercept.transpose();
    }
    Ok(out)
}

impl VetCodec for LinearModel {
    const KIND: &'static str = "linear_model";

    /// Rows `0..d` hold the weights, row `d` the intercept.
    fn to_vet(&self) -> Result<(VetTensor, Metadata)> {
        let d = self.n_features();
        let mut stacked = DMatrix::zeros(d + 1, self.n_voxels());
        stacked.rows_mut(0, d).copy_from(&self.weights);
        stacked.row_mut(d).copy_from(&self.intercept.transpose());
        let mut meta = Metadata::new();
        meta.insert("family".into(), self.family.as_str().into());
        meta.insert("lambda".into(), self.lambda.into());
        meta.insert("alpha".into(), self.alpha.into());
        if let Some(tol) = self.tol {
            meta.insert("tol".into(), tol.into());
        }
        if let Some(kkt) = self.kkt_residual {
            meta.insert("kkt_residual".into(), kkt.into());
        }
        Ok((VetTensor::from_matrix(&stacked), meta))
    }

    fn from_vet(tensor: VetTensor, meta: &Metadata) -> Result<Self> {
        let stacked = tensor.to_matrix()?;
        let d = stacked.nrows() - 1;
        Ok(LinearModel {
            weights: stacked.rows(0, d).into_owned(),
            intercept: stacked.row(d).transpose(),
            family: meta_str(meta, "family")?.parse()?,
            lambda: meta_f64(meta, "lambda")?,
            alpha: meta_f64(meta, "alpha")?,
            tol: meta.get("tol").and_then(|v| v.as_f64()),
            kkt_residual: meta.get("kkt_residual").and_then(|v| v.as_f64()),
        })
    }
}
