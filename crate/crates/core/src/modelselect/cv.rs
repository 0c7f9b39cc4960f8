use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::split::CvPlan;
use crate::error::{Error, Result};
use crate::evaluate::metrics::pearson_unchecked;
use crate::regress::{
    elastic_net_path, fit_family, fit_ridge, lambda_max, EncodingModel, Family, FamilyParams,
};

pub const DEFAULT_N_LAMBDAS: usize = 30;
pub const DEFAULT_LAMBDA_RATIO: f64 = 1e-3;

/// Geometric grid from `lambda_max` down to `lambda_max·ratio`, descending.
pub fn lasso_grid(lambda_max: f64, n_points: usize, ratio: f64) -> Vec<f64> {
    geometric(lambda_max, lambda_max * ratio, n_points)
}

/// Ten points from 1e3 down to 1e-4.
pub fn ridge_grid() -> Vec<f64> {
    geometric(1e3, 1e-4, 10)
}

fn geometric(hi: f64, lo: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![hi],
        _ => {
            let (lhi, llo) = (hi.ln(), lo.ln());
            (0..n)
                .map(|i| (lhi + (llo - lhi) * i as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

/// Mean over voxels of the Pearson correlation between predicted and actual
/// columns. A constant column scores 0; the flag reports whether every
/// column was constant.
pub fn mean_voxel_correlation(pred: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<(f64, bool)> {
    if pred.shape() != truth.shape() {
        return Err(Error::validation(format!(
            "prediction shape {:?} does not match {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    if pred.nrows() < 3 {
        return Err(Error::validation(format!(
            "correlation needs at least 3 videos, got {}",
            pred.nrows()
        )));
    }
    if pred.ncols() == 0 {
        return Err(Error::validation("no voxels to score"));
    }
    let mut sum = 0.0;
    let mut all_degenerate = true;
    for k in 0..pred.ncols() {
        let c = pearson_unchecked(pred.column(k).as_slice(), truth.column(k).as_slice());
        sum += c.r;
        all_degenerate &= c.degenerate;
    }
    Ok((sum / pred.ncols() as f64, all_degenerate))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvOptions {
    pub params: FamilyParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScores {
    pub family: Family,
    pub lambdas: Vec<f64>,
    /// Mean over folds of the mean voxel correlation, one per lambda.
    pub scores: Vec<f64>,
    /// True where every voxel's prediction was constant in every fold.
    pub degenerate: Vec<bool>,
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::validation("lambda grid is empty"));
    }
    if let Some(bad) = grid.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::validation(format!("lambda grid holds invalid value {bad}")));
    }
    if grid.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::validation("lambda grid must be strictly descending"));
    }
    Ok(())
}

fn fold_models(
    family: Family,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    grid: &[f64],
    params: &FamilyParams,
) -> Result<Vec<EncodingModel>> {
    match family {
        Family::Ridge => grid
            .iter()
            .map(|&l| fit_ridge(x, y, l, &params.opts).map(EncodingModel::Linear))
            .collect(),
        Family::Lasso | Family::ElasticNet => {
            let alpha = params.effective_alpha(family);
            let path = elastic_net_path(x, y, grid, alpha, params.tol, params.max_iter, &params.opts)?;
            Ok(path
                .into_iter()
                .map(|mut m| {
                    m.family = family;
                    EncodingModel::Linear(m)
                })
                .collect())
        }
        Family::Ols | Family::Res => Ok(vec![fit_family(family, x, y, params)?]),
    }
}

/// k-fold cross-validated score of every lambda on the grid. Lasso and
/// elastic net walk the grid with warm starts inside each fold. Families
/// without a penalty report a single entry at lambda 0.
pub fn cv_score(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    family: Family,
    lambda_grid: &[f64],
    plan: &CvPlan,
    options: &CvOptions,
) -> Result<CvScores> {
    if x.nrows() != plan.n() || y.nrows() != plan.n() {
        return Err(Error::validation(format!(
            "cv plan covers {} videos but X has {} and Y has {} rows",
            plan.n(),
            x.nrows(),
            y.nrows()
        )));
    }
    let grid: Vec<f64> = if family.has_lambda() {
        check_grid(lambda_grid)?;
        lambda_grid.to_vec()
    } else {
        vec![0.0]
    };
    let mut sums = vec![0.0; grid.len()];
    let mut degenerate = vec![true; grid.len()];
    for fold in 0..plan.k {
        let (train, held) = plan.fold(fold);
        if held.len() < 3 || train.len() < 2 {
            return Err(Error::validation(format!(
                "fold {fold} has {} held-out and {} training videos; need at least 3 and 2",
                held.len(),
                train.len()
            )));
        }
        let x_tr = x.select_rows(&train);
        let y_tr = y.select_rows(&train);
        let x_te = x.select_rows(&held);
        let y_te = y.select_rows(&held);
        let models = fold_models(family, &x_tr, &y_tr, &grid, &options.params)?;
        for (i, m) in models.iter().enumerate() {
            let pred = m.predict(&x_te)?;
            let (score, all_degenerate) = mean_voxel_correlation(&pred, &y_te)?;
            sums[i] += score;
            degenerate[i] &= all_degenerate;
        }
    }
    Ok(CvScores {
        family,
        scores: sums.iter().map(|s| s / plan.k as f64).collect(),
        lambdas: grid,
        degenerate,
    })
}

/// Lambda with the highest score. NaN scores are skipped and ties go to the
/// largest lambda.
pub fn select_lambda(lambdas: &[f64], scores: &[f64]) -> Result<f64> {
    if lambdas.len() != scores.len() {
        return Err(Error::validation(format!(
            "{} lambdas but {} scores",
            lambdas.len(),
            scores.len()
        )));
    }
    let mut best: Option<(f64, f64)> = None;
    for (&l, &s) in lambdas.iter().zip(scores) {
        if s.is_nan() {
            continue;
        }
        best = match best {
            Some((bl, bs)) if bs > s || (bs == s && bl >= l) => Some((bl, bs)),
            _ => Some((l, s)),
        };
    }
    best.map(|(l, _)| l)
        .ok_or_else(|| Error::Selection("every cross-validation score is NaN".into()))
}

/// Grid for a family: the geometric path below `lambda_max` for the
/// coordinate-descent families, the fixed ridge grid otherwise.
pub fn default_grid(
    family: Family,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    params: &FamilyParams,
    n_points: usize,
    ratio: f64,
) -> Result<Vec<f64>> {
    match family {
        Family::Ridge => Ok(ridge_grid()),
        Family::Lasso | Family::ElasticNet => {
            let top = lambda_max(x, y, params.effective_alpha(family).max(1e-3), &params.opts)?;
            if !(top > 0.0) {
                return Err(Error::validation("targets are constant; lambda_max is zero"));
            }
            Ok(lasso_grid(top, n_points, ratio))
        }
        Family::Ols | Family::Res => Ok(vec![0.0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelselect::split::make_folds;
    use crate::regress::predict_linear;
    use crate::rng::Stream;

    fn gaussian(rows: usize, cols: usize, s: &mut Stream) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| s.standard_normal())
    }

    #[test]
    fn grids_descend() {
        let g = ridge_grid();
        assert_eq!(g.len(), 10);
        assert!((g[0] - 1e3).abs() < 1e-9 && (g[9] - 1e-4).abs() < 1e-16);
        let g = lasso_grid(2.0, 30, 1e-3);
        assert_eq!(g.len(), 30);
        assert!((g[29] - 2e-3).abs() < 1e-15);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn select_lambda_rules() {
        assert_eq!(select_lambda(&[3.0, 2.0, 1.0], &[0.1, 0.5, 0.2]).unwrap(), 2.0);
        assert_eq!(select_lambda(&[3.0, 2.0, 1.0], &[0.5, 0.5, 0.2]).unwrap(), 3.0);
        assert_eq!(select_lambda(&[1.0, 2.0, 3.0], &[0.5, 0.5, 0.5]).unwrap(), 3.0);
        assert_eq!(select_lambda(&[3.0, 2.0], &[f64::NAN, 0.1]).unwrap(), 2.0);
        assert!(matches!(select_lambda(&[3.0, 2.0], &[f64::NAN, f64::NAN]), Err(Error::Selection(_))));
        assert!(matches!(select_lambda(&[1.0], &[]), Err(Error::Validation(_))));
    }

    #[test]
    fn grid_order_enforced() {
        let mut s = Stream::new(1);
        let x = gaussian(30, 3, &mut s);
        let y = gaussian(30, 2, &mut s);
        let plan = make_folds(30, 3, 0).unwrap();
        let opts = CvOptions { params: FamilyParams::default() };
        for bad in [&[1.0, 2.0][..], &[1.0, 1.0], &[], &[f64::NAN]] {
            assert!(matches!(cv_score(&x, &y, Family::Ridge, bad, &plan, &opts), Err(Error::Validation(_))));
        }
    }

    #[test]
    fn tiny_fold_rejected() {
        let mut s = Stream::new(2);
        let x = gaussian(8, 2, &mut s);
        let y = gaussian(8, 1, &mut s);
        let plan = make_folds(8, 3, 0).unwrap();
        let opts = CvOptions { params: FamilyParams::default() };
        assert!(matches!(cv_score(&x, &y, Family::Ridge, &[1.0], &plan, &opts), Err(Error::Validation(_))));
    }

    #[test]
    fn lambda_max_is_degenerate() {
        let mut s = Stream::new(3);
        let x = gaussian(60, 4, &mut s);
        let w = DMatrix::from_fn(4, 2, |_, _| s.standard_normal());
        let y = &x * &w + gaussian(60, 2, &mut s) * 0.1;
        let plan = make_folds(60, 3, 0).unwrap();
        let opts = CvOptions { params: FamilyParams::default() };
        // far above any fold's lambda_max, so every coefficient is zero
        let cv = cv_score(&x, &y, Family::Lasso, &[1e6, 1e-3], &plan, &opts).unwrap();
        assert_eq!(cv.scores[0], 0.0);
        assert!(cv.degenerate[0]);
        assert!(!cv.degenerate[1] && cv.scores[1] > 0.9);
    }

    #[test]
    fn unpenalized_family_has_one_entry() {
        let mut s = Stream::new(4);
        let x = gaussian(30, 3, &mut s);
        let y = gaussian(30, 2, &mut s);
        let plan = make_folds(30, 3, 0).unwrap();
        let opts = CvOptions { params: FamilyParams::default() };
        let cv = cv_score(&x, &y, Family::Ols, &[5.0, 1.0], &plan, &opts).unwrap();
        assert_eq!(cv.lambdas, vec![0.0]);
    }

    #[test]
    fn selection_matches_best_held_out_error() {
        // Noisy ridge sweep: the CV choice should be the grid point whose
        // held-out MSE on fresh data is lowest, or one whose MSE is within
        // a whisker of it.
        let mut s = Stream::new(5);
        let (n, d) = (120, 40);
        let x = gaussian(n, d, &mut s);
        let w = gaussian(d, 1, &mut s) * 0.2;
        let y = &x * &w + gaussian(n, 1, &mut s);
        let x_new = gaussian(2000, d, &mut s);
        let y_new = &x_new * &w;
        let plan = make_folds(n, 5, 1).unwrap();
        let grid = geometric(1e2, 1e-3, 16);
        let opts = CvOptions { params: FamilyParams::default() };
        let cv = cv_score(&x, &y, Family::Ridge, &grid, &plan, &opts).unwrap();
        let chosen = select_lambda(&cv.lambdas, &cv.scores).unwrap();
        let mse = |l: f64| {
            let m = fit_ridge(&x, &y, l, &Default::default()).unwrap();
            let p = predict_linear(&m, &x_new).unwrap();
            (p - &y_new).map(|e| e * e).mean()
        };
        let best = grid.iter().map(|&l| mse(l)).fold(f64::INFINITY, f64::min);
        let worst = grid.iter().map(|&l| mse(l)).fold(0.0, f64::max);
        assert!(mse(chosen) <= best + 0.1 * (worst - best), "chosen {chosen}");
    }

    #[test]
    fn noiseless_sweep_picks_oracle_lambda() {
        let mut s = Stream::new(6);
        let x = gaussian(90, 5, &mut s);
        let w = gaussian(5, 3, &mut s);
        let y = &x * &w;
        let plan = make_folds(90, 3, 2).unwrap();
        let grid = ridge_grid();
        let opts = CvOptions { params: FamilyParams::default() };
        let cv = cv_score(&x, &y, Family::Ridge, &grid, &plan, &opts).unwrap();
        let chosen = select_lambda(&cv.lambdas, &cv.scores).unwrap();
        let x_new = gaussian(500, 5, &mut s);
        let y_new = &x_new * &w;
        let mse: Vec<f64> = grid
            .iter()
            .map(|&l| {
                let m = fit_ridge(&x, &y, l, &Default::default()).unwrap();
                (predict_linear(&m, &x_new).unwrap() - &y_new).map(|e| e * e).mean()
            })
            .collect();
        let oracle = mse
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| grid[i])
            .unwrap();
        // correlation saturates at 1 for every small lambda, and ties go to
        // the largest; that lambda's error must still match the oracle's
        let i = grid.iter().position(|&l| l == chosen).unwrap();
        let j = grid.iter().position(|&l| l == oracle).unwrap();
        assert!((mse[i] - mse[j]).abs() <= 1e-6 * (1.0 + mse[j]), "{chosen} vs {oracle}");
    }
}
