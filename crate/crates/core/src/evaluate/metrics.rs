use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensorio::ResponseTensor;

/// Reliabilities at or below this are excluded from normalization.
pub const RELIABILITY_EPSILON: f64 = 1e-3;

/// A correlation value; `degenerate` marks a constant input, reported as 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub degenerate: bool,
}

impl Correlation {
    const DEGENERATE: Correlation = Correlation { r: 0.0, degenerate: true };
}

/// Sum of squared deviations, or `None` when the vector is constant up to
/// rounding.
fn spread(v: &[f64], mean: f64) -> Option<f64> {
    let ss: f64 = v.iter().map(|x| (x - mean) * (x - mean)).sum();
    let scale = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let floor = (4.0 * f64::EPSILON * scale).powi(2) * v.len() as f64;
    (ss > floor).then_some(ss)
}

pub(crate) fn pearson_unchecked(x: &[f64], y: &[f64]) -> Correlation {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (Some(sxx), Some(syy)) = (spread(x, mx), spread(y, my)) else {
        return Correlation::DEGENERATE;
    };
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    Correlation {
        r: (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0),
        degenerate: false,
    }
}

/// Pearson correlation of two equally long vectors (n >= 3).
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::validation(format!(
            "pearson: length mismatch {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::validation(format!(
            "pearson needs at least 3 samples, got {}",
            x.len()
        )));
    }
    Ok(pearson_unchecked(x, y))
}

/// How repetitions are divided into two halves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum SplitRule {
    /// First `ceil(reps/2)` repetitions against the rest.
    #[default]
    FirstHalf,
    /// Mean over `n_splits` random halvings.
    RandomSplits { n_splits: usize, seed: u64 },
}

fn check_reliability_input(r: &ResponseTensor) -> Result<()> {
    if r.n_reps() < 2 {
        return Err(Error::validation("split-half reliability needs at least 2 repetitions"));
    }
    if r.n_videos() < 3 {
        return Err(Error::validation(format!(
            "split-half reliability needs at least 3 videos, got {}",
            r.n_videos()
        )));
    }
    Ok(())
}

fn halves(order: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let cut = order.len().div_ceil(2);
    (order[..cut].to_vec(), order[cut..].to_vec())
}

fn correlate_columns(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<Correlation> {
    (0..a.ncols())
        .map(|k| pearson_unchecked(a.column(k).as_slice(), b.column(k).as_slice()))
        .collect()
}

/// Split-half reliability of every voxel.
pub fn reliability_all(r: &ResponseTensor, rule: SplitRule) -> Result<Vec<Correlation>> {
    check_reliability_input(r)?;
    let identity: Vec<usize> = (0..r.n_reps()).collect();
    match rule {
        SplitRule::FirstHalf => {
            let (h1, h2) = halves(&identity);
            Ok(correlate_columns(&r.mean_over_reps(h1), &r.mean_over_reps(h2)))
        }
        SplitRule::RandomSplits { n_splits, seed } => {
            if n_splits == 0 {
                return Err(Error::validation("random split count must be >= 1"));
            }
            let mut stream = Stream::new(seed);
            let mut sums = vec![0.0; r.n_voxels()];
            let mut all_degenerate = vec![true; r.n_voxels()];
            for _ in 0..n_splits {
                let (h1, h2) = halves(&stream.permutation(r.n_reps()));
                for (k, c) in correlate_columns(&r.mean_over_reps(h1), &r.mean_over_reps(h2))
                    .into_iter()
                    .enumerate()
                {
                    sums[k] += c.r;
                    all_degenerate[k] &= c.degenerate;
                }
            }
            Ok(sums
                .into_iter()
                .zip(all_degenerate)
                .map(|(s, degenerate)| Correlation {
                    r: s / n_splits as f64,
                    degenerate,
                })
                .collect())
        }
    }
}

pub fn split_half_reliability(r: &ResponseTensor, voxel: usize) -> Result<Correlation> {
    split_half_reliability_with(r, voxel, SplitRule::FirstHalf)
}

pub fn split_half_reliability_with(r: &ResponseTensor, voxel: usize, rule: SplitRule) -> Result<Correlation> {
    if voxel >= r.n_voxels() {
        return Err(Error::validation(format!(
            "voxel {voxel} out of range ({} voxels)",
            r.n_voxels()
        )));
    }
    let single = r.select_voxels(&[voxel])?;
    Ok(reliability_all(&single, rule)?[0])
}

/// Reliability of the mean of `factor` halves from the reliability of one.
pub fn spearman_brown(reliability: f64, factor: f64) -> f64 {
    factor * reliability / (1.0 + (factor - 1.0) * reliability)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizedScore {
    pub value: f64,
    /// Reliability at or below the epsilon; value is 0.
    pub excluded: bool,
}

/// `raw_r / sqrt(reliability)`, or 0 (excluded) when the reliability is not
/// above [`RELIABILITY_EPSILON`]. Not clamped: values above 1 are possible.
pub fn normalized_score(raw_r: f64, reliability: f64) -> NormalizedScore {
    if reliability > RELIABILITY_EPSILON {
        NormalizedScore {
            value: raw_r / reliability.sqrt(),
            excluded: false,
        }
    } else {
        NormalizedScore {
            value: 0.0,
            excluded: true,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorio::RoiName;
    use proptest::prelude::*;

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1., 2., 3.], &[2., 4., 6.]).unwrap().r - 1.0).abs() < 1e-12);
        assert!((pearson(&[1., 2., 3.], &[3., 2., 1.]).unwrap().r + 1.0).abs() < 1e-12);
        // sxy = 4, sxx = syy = 5 -> 4/5
        assert!((pearson(&[1., 2., 3., 4.], &[1., 3., 2., 4.]).unwrap().r - 0.8).abs() < 1e-12);
    }

    #[test]
    fn pearson_errors_and_degenerate() {
        assert!(matches!(pearson(&[1., 2., 3.], &[1., 2.]), Err(Error::Validation(_))));
        assert!(matches!(pearson(&[1., 2.], &[1., 2.]), Err(Error::Validation(_))));
        let c = pearson(&[0.1, 0.1, 0.1], &[1., 2., 3.]).unwrap();
        assert_eq!(c, Correlation { r: 0.0, degenerate: true });
    }

    #[test]
    fn normalized_examples() {
        assert_eq!(normalized_score(0.5, 0.25), NormalizedScore { value: 1.0, excluded: false });
        assert_eq!(normalized_score(0.3, 1.0).value, 0.3);
        assert_eq!(normalized_score(0.4, -0.1), NormalizedScore { value: 0.0, excluded: true });
        assert!(normalized_score(0.4, RELIABILITY_EPSILON).excluded);
        assert!(normalized_score(0.9, 0.5).value > 1.0);
    }

    #[test]
    fn spearman_brown_doubling() {
        assert!((spearman_brown(0.5, 2.0) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(spearman_brown(1.0, 2.0), 1.0);
    }

    fn tensor(videos: usize, reps: usize, f: impl Fn(usize, usize) -> f64) -> ResponseTensor {
        let data = (0..videos).flat_map(|v| (0..reps).map(move |r| (v, r))).map(|(v, r)| f(v, r)).collect();
        ResponseTensor::new(RoiName::V1, 1, [videos, reps, 1], data).unwrap()
    }

    #[test]
    fn identical_repetitions_are_fully_reliable() {
        let t = tensor(10, 4, |v, _| (v as f64).sin());
        assert!((split_half_reliability(&t, 0).unwrap().r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_half_is_degenerate() {
        let t = tensor(5, 2, |v, r| if r == 0 { 1.0 } else { v as f64 });
        assert!(split_half_reliability(&t, 0).unwrap().degenerate);
    }

    #[test]
    fn odd_repetitions_split_ceil_first() {
        // reps 0,1 vs 2: make rep 2 the negation of reps 0/1
        let t = tensor(6, 3, |v, r| if r < 2 { v as f64 } else { -(v as f64) });
        assert!((split_half_reliability(&t, 0).unwrap().r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn reliability_preconditions() {
        let t = tensor(2, 2, |v, r| (v + r) as f64);
        assert!(matches!(split_half_reliability(&t, 0), Err(Error::Validation(_))));
        let t = tensor(4, 2, |v, r| (v * r) as f64);
        assert!(split_half_reliability(&t, 1).is_err());
    }

    #[test]
    fn reliability_ignores_order_within_halves() {
        let mut s = Stream::new(61);
        let noise: Vec<f64> = (0..40 * 4).map(|_| s.standard_normal()).collect();
        let a = tensor(40, 4, |v, r| (v as f64 * 0.3).cos() + noise[v * 4 + r]);
        // swap reps 0<->1 and 2<->3
        let b = tensor(40, 4, |v, r| (v as f64 * 0.3).cos() + noise[v * 4 + (r ^ 1)]);
        let ra = split_half_reliability(&a, 0).unwrap().r;
        let rb = split_half_reliability(&b, 0).unwrap().r;
        assert!((ra - rb).abs() < 1e-12);
    }

    #[test]
    fn random_splits_average() {
        let t = tensor(10, 4, |v, _| v as f64);
        let c = split_half_reliability_with(&t, 0, SplitRule::RandomSplits { n_splits: 10, seed: 3 }).unwrap();
        assert!((c.r - 1.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn pearson_affine_symmetric_bounded(
            xs in prop::collection::vec(-100.0f64..100.0, 3..30),
            seed in any::<u64>(),
            a in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0],
            b in -100.0f64..100.0,
        ) {
            let mut s = Stream::new(seed);
            let ys: Vec<f64> = xs.iter().map(|_| s.standard_normal()).collect();
            let r = pearson(&xs, &ys).unwrap();
            prop_assume!(!r.degenerate);
            let scaled: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
            let r2 = pearson(&scaled, &ys).unwrap();
            prop_assert!((r2.r - a.signum() * r.r).abs() < 1e-12);
            prop_assert!((pearson(&ys, &xs).unwrap().r - r.r).abs() < 1e-12);
            prop_assert!(r.r.abs() <= 1.0 + 1e-12);
        }

        #[test]
        fn normalized_monotone_in_raw(r1 in -1.0f64..1.0, r2 in -1.0f64..1.0, rel in 0.0011f64..1.0) {
            let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
            prop_assert!(normalized_score(lo, rel).value <= normalized_score(hi, rel).value);
        }
    }
}
