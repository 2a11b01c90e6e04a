//! Prediction intervals, coverage, and coverage-error / sharpness scores.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GaussianPrediction;
use crate::scalar::{count, Scalar};

/// Strictly increasing confidence levels in (0, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ConfidenceGrid {
    levels: Vec<f64>,
}

impl ConfidenceGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Config("confidence grid is empty".into()));
        }
        if let Some(&p) = levels.iter().find(|&&p| !(p > 0.0 && p < 1.0)) {
            return Err(Error::POutOfRange(p));
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("confidence grid not strictly increasing: {levels:?}")));
        }
        Ok(ConfidenceGrid { levels })
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// 0.05, 0.10, ..., 0.95.
impl Default for ConfidenceGrid {
    fn default() -> Self {
        ConfidenceGrid {
            levels: (1..20).map(|k| k as f64 / 20.0).collect(),
        }
    }
}

impl TryFrom<Vec<f64>> for ConfidenceGrid {
    type Error = Error;

    fn try_from(levels: Vec<f64>) -> Result<Self> {
        Self::new(levels)
    }
}

impl From<ConfidenceGrid> for Vec<f64> {
    fn from(grid: ConfidenceGrid) -> Self {
        grid.levels
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionInterval<T> {
    pub lower: T,
    pub upper: T,
    pub level: T,
}

impl<T: Scalar> PredictionInterval<T> {
    pub fn width(&self) -> T {
        self.upper - self.lower
    }

    /// Both endpoints inclusive.
    pub fn covers(&self, y: T) -> bool {
        self.lower <= y && y <= self.upper
    }
}

fn check_level<T: Scalar>(p: T) -> Result<()> {
    if p > T::zero() && p < T::one() {
        Ok(())
    } else {
        Err(Error::POutOfRange(p.as_f64()))
    }
}

/// Tail probabilities `((1 − p)/2, (1 + p)/2)` of a central interval.
pub fn central_tails<T: Scalar>(p: T) -> Result<(T, T)> {
    check_level(p)?;
    let half = T::lit(0.5);
    Ok(((T::one() - p) * half, (T::one() + p) * half))
}

pub fn gaussian_quantile<T: Scalar>(pred: &GaussianPrediction<T>, p: T) -> Result<T> {
    pred.quantile(p)
}

/// Equal-tailed interval `[F⁻¹((1−p)/2), F⁻¹((1+p)/2)]`.
pub fn central_interval<T: Scalar>(pred: &GaussianPrediction<T>, p: T) -> Result<PredictionInterval<T>> {
    let (lo, hi) = central_tails(p)?;
    Ok(PredictionInterval {
        lower: pred.quantile(lo)?,
        upper: pred.quantile(hi)?,
        level: p,
    })
}

/// Two-sided coverage per grid level for any per-row quantile function
/// `quantile(row, probability)`.
pub fn coverage_with<T, Q>(y: &[T], grid: &ConfidenceGrid, quantile: Q) -> Result<Vec<T>>
where
    T: Scalar,
    Q: Fn(usize, T) -> Result<T>,
{
    if y.is_empty() {
        return Err(Error::EmptySample("coverage"));
    }
    grid.levels()
        .iter()
        .map(|&level| {
            let (lo, hi) = central_tails(T::lit(level))?;
            let mut covered = 0usize;
            for (i, &yi) in y.iter().enumerate() {
                if quantile(i, lo)? <= yi && yi <= quantile(i, hi)? {
                    covered += 1;
                }
            }
            Ok(count::<T>(covered) / count(y.len()))
        })
        .collect()
}

/// One-sided coverage `#{y_i ≤ F⁻¹(p)} / N` per grid level.
pub fn one_sided_coverage_with<T, Q>(y: &[T], grid: &ConfidenceGrid, quantile: Q) -> Result<Vec<T>>
where
    T: Scalar,
    Q: Fn(usize, T) -> Result<T>,
{
    if y.is_empty() {
        return Err(Error::EmptySample("coverage"));
    }
    grid.levels()
        .iter()
        .map(|&level| {
            let p = T::lit(level);
            let mut below = 0usize;
            for (i, &yi) in y.iter().enumerate() {
                if yi <= quantile(i, p)? {
                    below += 1;
                }
            }
            Ok(count::<T>(below) / count(y.len()))
        })
        .collect()
}

fn check_lengths<T>(preds: &[GaussianPrediction<T>], y: &[T]) -> Result<()> {
    if preds.len() != y.len() {
        return Err(Error::length("targets", preds.len(), y.len()));
    }
    Ok(())
}

/// Fraction of targets inside each level's central interval.
pub fn empirical_coverage<T: Scalar>(
    preds: &[GaussianPrediction<T>],
    y: &[T],
    grid: &ConfidenceGrid,
) -> Result<Vec<T>> {
    check_lengths(preds, y)?;
    coverage_with(y, grid, |i, p| preds[i].quantile(p))
}

pub fn one_sided_coverage<T: Scalar>(
    preds: &[GaussianPrediction<T>],
    y: &[T],
    grid: &ConfidenceGrid,
) -> Result<Vec<T>> {
    check_lengths(preds, y)?;
    one_sided_coverage_with(y, grid, |i, p| preds[i].quantile(p))
}

fn coverage_errors<T: Scalar>(grid: &ConfidenceGrid, coverages: &[T]) -> Result<Vec<T>> {
    if grid.len() != coverages.len() {
        return Err(Error::length("coverages", grid.len(), coverages.len()));
    }
    Ok(grid
        .levels()
        .iter()
        .zip(coverages)
        .map(|(&p, &c)| (T::lit(p) - c).abs())
        .collect())
}

/// Mean absolute gap between nominal level and observed coverage.
pub fn ecpe<T: Scalar>(grid: &ConfidenceGrid, coverages: &[T]) -> Result<T> {
    let errs = coverage_errors(grid, coverages)?;
    Ok(errs.iter().copied().sum::<T>() / count(errs.len()))
}

/// Largest absolute gap between nominal level and observed coverage.
pub fn mcpe<T: Scalar>(grid: &ConfidenceGrid, coverages: &[T]) -> Result<T> {
    Ok(coverage_errors(grid, coverages)?
        .into_iter()
        .fold(T::zero(), T::max))
}

/// Mean and max width of the central intervals at `level`.
pub fn epiw_mpiw<T: Scalar>(preds: &[GaussianPrediction<T>], level: T) -> Result<(T, T)> {
    let widths = preds
        .iter()
        .map(|p| central_interval(p, level).map(|iv| iv.width()))
        .collect::<Result<Vec<_>>>()?;
    width_stats(&widths)
}

pub(crate) fn width_stats<T: Scalar>(widths: &[T]) -> Result<(T, T)> {
    if widths.is_empty() {
        return Err(Error::EmptySample("interval widths"));
    }
    let mean = widths.iter().copied().sum::<T>() / count(widths.len());
    let max = widths.iter().copied().fold(T::neg_infinity(), T::max);
    Ok((mean, max))
}

/// One row of a reliability diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub expected: f64,
    pub observed: f64,
}

pub fn reliability_rows<T: Scalar>(
    preds: &[GaussianPrediction<T>],
    y: &[T],
    grid: &ConfidenceGrid,
) -> Result<Vec<ReliabilityRow>> {
    let cov = empirical_coverage(preds, y, grid)?;
    Ok(rows_from(grid, &cov))
}

pub(crate) fn rows_from<T: Scalar>(grid: &ConfidenceGrid, coverages: &[T]) -> Vec<ReliabilityRow> {
    grid.levels()
        .iter()
        .zip(coverages)
        .map(|(&expected, &c)| ReliabilityRow {
            expected,
            observed: c.as_f64(),
        })
        .collect()
}
