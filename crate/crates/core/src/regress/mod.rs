//! Encoding model families: ordinary least squares, ridge, lasso and elastic
//! net (coordinate descent), and similarity-weighted encoding (RES).
//!
//! All linear families minimize
//! `(1/(2n))·‖y − Xw − b‖² + λ·(α‖w‖₁ + ((1−α)/2)‖w‖²)`
//! with the intercept left unpenalized: X and Y are centered before solving
//! and `b = ȳ − x̄ᵀw` is restored afterwards. Every voxel is an independent
//! problem; voxels are solved in parallel on the current rayon pool and the
//! result never depends on the number of workers.

mod elastic_net;
mod linear;
mod res;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

pub use elastic_net::{
    elastic_net_path, fit_elastic_net, fit_elastic_net_traced, fit_lasso, lambda_max,
    soft_threshold, ElasticNetParams, DEFAULT_MAX_ITER, DEFAULT_TOL,
};
pub use linear::{fit_ols, fit_ridge, predict_linear, FitOptions, LinearModel};
pub use res::{fit_res, predict_res, ResModel, Similarity};

use crate::error::{Error, Result};
use crate::tensorio::{self, vet::meta_str, Metadata, VetCodec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Ols,
    Ridge,
    Lasso,
    ElasticNet,
    Res,
}

impl Family {
    pub fn as_str(&self) -> &'static str {
        match self {
            Family::Ols => "ols",
            Family::Ridge => "ridge",
            Family::Lasso => "lasso",
            Family::ElasticNet => "elasticnet",
            Family::Res => "res",
        }
    }

    /// Whether the family has a penalty strength to tune.
    pub fn has_lambda(&self) -> bool {
        matches!(self, Family::Ridge | Family::Lasso | Family::ElasticNet)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ols" | "linear" => Ok(Family::Ols),
            "ridge" => Ok(Family::Ridge),
            "lasso" => Ok(Family::Lasso),
            "elasticnet" | "enet" => Ok(Family::ElasticNet),
            "res" => Ok(Family::Res),
            _ => Err(Error::validation(format!("unknown model family {s:?}"))),
        }
    }
}

/// Hyperparameters shared by every family; each family reads what it needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyParams {
    pub lambda: f64,
    /// Elastic-net mixing weight. Lasso always uses 1 and ridge 0.
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub opts: FitOptions,
}

impl Default for FamilyParams {
    fn default() -> Self {
        FamilyParams {
            lambda: 0.0,
            alpha: 0.5,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            opts: FitOptions::default(),
        }
    }
}

impl FamilyParams {
    /// The mixing weight the family actually uses.
    pub fn effective_alpha(&self, family: Family) -> f64 {
        match family {
            Family::Lasso => 1.0,
            Family::ElasticNet => self.alpha,
            _ => 0.0,
        }
    }
}

pub fn fit_family(family: Family, x: &DMatrix<f64>, y: &DMatrix<f64>, p: &FamilyParams) -> Result<EncodingModel> {
    Ok(match family {
        Family::Ols => EncodingModel::Linear(fit_ols(x, y, &p.opts)?),
        Family::Ridge => EncodingModel::Linear(fit_ridge(x, y, p.lambda, &p.opts)?),
        Family::Lasso => EncodingModel::Linear(fit_lasso(x, y, p.lambda, p.tol, p.max_iter, &p.opts)?),
        Family::ElasticNet => {
            let params = ElasticNetParams::new(p.lambda, p.alpha).with_tol(p.tol).with_max_iter(p.max_iter);
            EncodingModel::Linear(fit_elastic_net(x, y, &params, &p.opts)?)
        }
        Family::Res => EncodingModel::Res(fit_res(x, y)?),
    })
}

/// Any fitted encoding model.
#[derive(Debug, Clone, PartialEq)]
pub enum EncodingModel {
    Linear(LinearModel),
    Res(ResModel),
}

impl EncodingModel {
    pub fn family(&self) -> Family {
        match self {
            EncodingModel::Linear(m) => m.family,
            EncodingModel::Res(_) => Family::Res,
        }
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            EncodingModel::Linear(m) => predict_linear(m, x),
            EncodingModel::Res(m) => predict_res(m, x),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, extra: &Metadata) -> Result<()> {
        match self {
            EncodingModel::Linear(m) => tensorio::save_with_meta(path, m, extra),
            EncodingModel::Res(m) => tensorio::save_with_meta(path, m, extra),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Metadata)> {
        let (tensor, meta) = tensorio::read_tensor(path)?;
        let model = match meta_str(&meta, "kind")? {
            LinearModel::KIND => EncodingModel::Linear(LinearModel::from_vet(tensor, &meta)?),
            ResModel::KIND => EncodingModel::Res(ResModel::from_vet(tensor, &meta)?),
            other => return Err(Error::format(format!("{other:?} is not a model file"))),
        };
        Ok((model, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn family_names() {
        for f in [Family::Ols, Family::Ridge, Family::Lasso, Family::ElasticNet, Family::Res] {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
        }
        assert_eq!("elastic_net".parse::<Family>().unwrap(), Family::ElasticNet);
        assert!("svm".parse::<Family>().is_err());
    }
}
