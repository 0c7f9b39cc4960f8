//! Cyclic coordinate descent for the elastic net, solved on the Gram matrix.
//!
//! With `G = XᵀX` and `q = Xᵀ(y − Xw)` kept in sync, coordinate `j` updates as
//!
//! ```text
//! ρ_j = (q_j + G_jj·w_j) / n
//! w_j ← S(ρ_j, λα) / (G_jj/n + λ(1−α))
//! ```
//!
//! where `S` is soft-thresholding. `G` and `XᵀY` are computed once and shared
//! by every voxel. A solve stops when a full sweep moves no coordinate by
//! more than `tol` and the KKT residual is at most `10·tol`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::linear::{Centered, FitOptions, LinearModel};
use super::Family;
use crate::error::{Error, NonConvergence, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticNetParams {
    pub lambda: f64,
    /// Mixing weight in `[0, 1]`; 1 is the lasso.
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl ElasticNetParams {
    pub fn new(lambda: f64, alpha: f64) -> Self {
        ElasticNetParams {
            lambda,
            alpha,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::validation(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::validation(format!("alpha must lie in [0, 1], got {}", self.alpha)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::validation(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::validation("max_iter must be >= 1"));
        }
        Ok(())
    }
}

/// `S(z, γ) = sign(z)·max(|z| − γ, 0)`
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Smallest lambda at which every voxel's solution is identically zero:
/// `max_k ‖Xᵀy_k‖_∞ / (n·α)` on centered data (infinite for `α = 0`).
pub fn lambda_max(x: &DMatrix<f64>, y: &DMatrix<f64>, alpha: f64, opts: &FitOptions) -> Result<f64> {
    let c = Centered::new(x, y, opts)?;
    let xty = c.x.transpose() * &c.y;
    let top = xty.amax() / c.n() as f64;
    Ok(if alpha > 0.0 { top / alpha } else { f64::INFINITY })
}

struct Problem {
    gram: DMatrix<f64>,
    xty: DMatrix<f64>,
    n: f64,
}

impl Problem {
    fn new(c: &Centered) -> Self {
        let xt = c.x.transpose();
        Problem {
            gram: &xt * &c.x,
            xty: &xt * &c.y,
            n: c.n() as f64,
        }
    }

    fn d(&self) -> usize {
        self.gram.nrows()
    }

    /// `q = Xᵀy_k − G·w`
    fn gradient(&self, voxel: usize, w: &DVector<f64>) -> DVector<f64> {
        self.xty.column(voxel) - &self.gram * w
    }

    fn kkt_residual(&self, q: &DVector<f64>, w: &DVector<f64>, p: &ElasticNetParams) -> f64 {
        let l1 = p.lambda * p.alpha;
        let l2 = p.lambda * (1.0 - p.alpha);
        (0..self.d())
            .map(|j| {
                let g = q[j] / self.n - l2 * w[j];
                if w[j] == 0.0 {
                    (g.abs() - l1).max(0.0)
                } else {
                    (g - l1 * w[j].signum()).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    /// Solves one voxel from `w`, updating it in place; returns the KKT residual.
    fn solve(
        &self,
        voxel: usize,
        w: &mut DVector<f64>,
        p: &ElasticNetParams,
        mut on_sweep: impl FnMut(&DVector<f64>),
    ) -> Result<f64> {
        let l1 = p.lambda * p.alpha;
        let l2 = p.lambda * (1.0 - p.alpha);
        let mut q = self.gradient(voxel, w);
        let mut max_change = f64::INFINITY;
        let mut kkt = f64::INFINITY;
        for _sweep in 0..p.max_iter {
            max_change = 0.0;
            for j in 0..self.d() {
                let z = self.gram[(j, j)];
                let old = w[j];
                let new = if z > 0.0 {
                    soft_threshold((q[j] + z * old) / self.n, l1) / (z / self.n + l2)
                } else {
                    0.0
                };
                let delta = new - old;
                if delta != 0.0 {
                    q.axpy(-delta, &self.gram.column(j), 1.0);
                    w[j] = new;
                    max_change = max_change.max(delta.abs());
                }
            }
            on_sweep(w);
            if max_change < p.tol {
                // resync to drop accumulated rounding in q
                q = self.gradient(voxel, w);
                kkt = self.kkt_residual(&q, w, p);
                if kkt <= 10.0 * p.tol {
                    return Ok(kkt);
                }
            }
        }
        if !kkt.is_finite() {
            kkt = self.kkt_residual(&self.gradient(voxel, w), w, p);
        }
        Err(Error::Convergence(Box::new(NonConvergence {
            voxel,
            iterations: p.max_iter,
            max_change,
            kkt_residual: kkt,
            last_iterate: w.iter().copied().collect(),
        })))
    }
}

fn warn_if_unstandardized(x: &DMatrix<f64>) {
    let n = x.nrows() as f64;
    let off = x.column_iter().any(|col| {
        let mu = col.mean();
        let sd = (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
        sd > 0.0 && !(0.1..=10.0).contains(&sd)
    });
    if off {
        log::warn!("elastic net design columns are not standardized; penalties will act unevenly");
    }
}

fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

/// Elastic net along a descending lambda path, warm-starting each voxel from
/// its previous solution. Returns one model per lambda, in path order.
pub fn elastic_net_path(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambdas: &[f64],
    alpha: f64,
    tol: f64,
    max_iter: usize,
    opts: &FitOptions,
) -> Result<Vec<LinearModel>> {
    if lambdas.is_empty() {
        return Err(Error::validation("lambda path is empty"));
    }
    if lambdas.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::validation("lambda path must be non-increasing"));
    }
    let params: Vec<ElasticNetParams> = lambdas
        .iter()
        .map(|&l| ElasticNetParams { lambda: l, alpha, tol, max_iter })
        .collect();
    for p in &params {
        p.validate()?;
    }
    let c = Centered::new(x, y, opts)?;
    warn_if_unstandardized(&c.x);
    let prob = Problem::new(&c);
    let d = prob.d();
    let v = c.y.ncols();

    // per voxel: (weights, kkt) for every lambda
    let per_voxel = first_error(
        (0..v)
            .into_par_iter()
            .map(|k| {
                let mut w = DVector::zeros(d);
                params
                    .iter()
                    .map(|p| prob.solve(k, &mut w, p, |_| ()).map(|kkt| (w.clone(), kkt)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect(),
    )?;

    Ok(params
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let weights = DMatrix::from_fn(d, v, |j, k| per_voxel[k][i].0[j]);
            let kkt = per_voxel.iter().map(|s| s[i].1).fold(0.0, f64::max);
            LinearModel {
                intercept: c.intercept(&weights),
                weights,
                family: if alpha == 1.0 { Family::Lasso } else { Family::ElasticNet },
                lambda: p.lambda,
                alpha,
                tol: Some(tol),
                kkt_residual: Some(kkt),
            }
        })
        .collect())
}

/// Single elastic-net fit from a zero start.
pub fn fit_elastic_net(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    params: &ElasticNetParams,
    opts: &FitOptions,
) -> Result<LinearModel> {
    let mut models = elastic_net_path(x, y, &[params.lambda], params.alpha, params.tol, params.max_iter, opts)?;
    let mut m = models.pop().expect("one lambda in, one model out");
    m.family = Family::ElasticNet;
    Ok(m)
}

/// Lasso at `lambda`, reached along a geometric path from `lambda_max`.
pub fn fit_lasso(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
    opts: &FitOptions,
) -> Result<LinearModel> {
    let top = lambda_max(x, y, 1.0, opts)?;
    let mut path = Vec::new();
    if top > lambda && lambda > 0.0 {
        let steps = 10;
        let ratio = (lambda / top).powf(1.0 / steps as f64);
        path.extend((0..steps).map(|i| top * ratio.powi(i)));
    }
    path.push(lambda);
    let mut models = elastic_net_path(x, y, &path, 1.0, tol, max_iter, opts)?;
    Ok(models.pop().expect("non-empty path"))
}

/// Single-voxel solve that records the penalized objective after every sweep.
pub fn fit_elastic_net_traced(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    params: &ElasticNetParams,
    opts: &FitOptions,
) -> Result<(LinearModel, Vec<f64>)> {
    params.validate()?;
    let y = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let c = Centered::new(x, &y, opts)?;
    let prob = Problem::new(&c);
    let mut w = DVector::zeros(prob.d());
    let objective = |w: &DVector<f64>| {
        let r = c.y.column(0) - &c.x * w;
        r.norm_squared() / (2.0 * prob.n)
            + params.lambda
                * (params.alpha * w.lp_norm(1) + 0.5 * (1.0 - params.alpha) * w.norm_squared())
    };
    let mut trace = vec![objective(&w)];
    let kkt = prob.solve(0, &mut w, params, |w| trace.push(objective(w)))?;
    let weights = DMatrix::from_column_slice(prob.d(), 1, w.as_slice());
    Ok((
        LinearModel {
            intercept: c.intercept(&weights),
            weights,
            family: Family::ElasticNet,
            lambda: params.lambda,
            alpha: params.alpha,
            tol: Some(params.tol),
            kkt_residual: Some(kkt),
        },
        trace,
    ))
}
