//! Isotonic post-hoc recalibration of predictive CDFs.
//!
//! The recalibrator is a nondecreasing step function `R` on `[0, 1]`, fitted
//! on a held-out split to map predicted CDF levels `F_i(y_i)` onto their
//! empirical frequencies. Point predictions are never touched.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{CalibrationReport, ConfidenceGrid, DEFAULT_INTERVAL_LEVEL};
use crate::model::GaussianPrediction;
use crate::scalar::Scalar;

/// Isotonic least-squares fit by pool-adjacent-violators.
pub fn pav<T: Scalar>(values: &[T], weights: &[T]) -> Result<Vec<T>> {
    if weights.len() != values.len() {
        return Err(Error::length("weights", values.len(), weights.len()));
    }
    if weights.iter().any(|&w| !(w > T::zero())) {
        return Err(Error::Config("pav weights must be positive".into()));
    }
    // Blocks of (weighted mean, total weight, length).
    let mut blocks: Vec<(T, T, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, n2) = blocks[blocks.len() - 1];
            let (m1, w1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let w = w1 + w2;
            *blocks.last_mut().expect("two blocks") = ((m1 * w1 + m2 * w2) / w, w, n1 + n2);
        }
    }
    Ok(blocks
        .into_iter()
        .flat_map(|(m, _, n)| std::iter::repeat_n(m, n))
        .collect())
}

/// One step of the recalibration map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub input_level: f64,
    pub output_level: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsotonicRecalibrator {
    breakpoints: Vec<Breakpoint>,
}

/// Inverse levels are kept this far inside `(0, 1)` so quantiles stay finite.
const LEVEL_FLOOR: f64 = 1e-12;

/// Slack when comparing a requested level to step heights, so tail levels
/// such as `(1 − 0.7)/2 = 0.15000000000000002` land on the intended step.
const LEVEL_SLACK: f64 = 1e-12;

impl IsotonicRecalibrator {
    pub fn from_breakpoints(breakpoints: Vec<Breakpoint>) -> Result<Self> {
        if breakpoints.is_empty() {
            return Err(Error::TooFewPoints(0));
        }
        for b in &breakpoints {
            let ok = |v: f64| (0.0..=1.0).contains(&v);
            if !ok(b.input_level) || !ok(b.output_level) {
                return Err(Error::Config(format!("breakpoint outside [0, 1]: {b:?}")));
            }
        }
        for w in breakpoints.windows(2) {
            if !(w[0].input_level < w[1].input_level) || w[0].output_level > w[1].output_level {
                return Err(Error::Config(format!(
                    "breakpoints must increase: {:?} then {:?}",
                    w[0], w[1]
                )));
            }
        }
        Ok(IsotonicRecalibrator { breakpoints })
    }

    /// Steps at `k/resolution` with matching outputs; agrees with the
    /// identity at those levels.
    pub fn identity(resolution: usize) -> Self {
        let breakpoints = (0..=resolution.max(1))
            .map(|k| {
                let v = k as f64 / resolution.max(1) as f64;
                Breakpoint {
                    input_level: v,
                    output_level: v,
                }
            })
            .collect();
        IsotonicRecalibrator { breakpoints }
    }

    /// Fits `R` to the pairs `(F_i(y_i), fraction of F_j(y_j) ≤ F_i(y_i))`.
    pub fn fit<T: Scalar>(preds: &[GaussianPrediction<T>], y: &[T]) -> Result<Self> {
        if preds.len() != y.len() {
            return Err(Error::length("targets", preds.len(), y.len()));
        }
        if preds.len() < 2 {
            return Err(Error::TooFewPoints(preds.len()));
        }
        let mut u: Vec<f64> = preds.iter().zip(y).map(|(p, &yi)| p.cdf(yi).as_f64()).collect();
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predicted CDF levels".into()));
        }
        u.sort_by(f64::total_cmp);
        let n = u.len() as f64;
        let mut levels = Vec::new();
        let mut targets = Vec::new();
        let mut weights = Vec::new();
        let mut i = 0;
        while i < u.len() {
            let mut j = i;
            while j + 1 < u.len() && u[j + 1] == u[i] {
                j += 1;
            }
            levels.push(u[i]);
            targets.push((j + 1) as f64 / n);
            weights.push((j + 1 - i) as f64);
            i = j + 1;
        }
        let fitted = pav(&targets, &weights)?;
        let breakpoints = levels
            .into_iter()
            .zip(fitted)
            .map(|(input_level, output_level)| Breakpoint {
                input_level,
                output_level: output_level.clamp(0.0, 1.0),
            })
            .collect();
        Self::from_breakpoints(breakpoints)
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.breakpoints
    }

    /// Right-continuous step function; 0 below the first breakpoint.
    pub fn map(&self, u: f64) -> f64 {
        let k = self.breakpoints.partition_point(|b| b.input_level <= u);
        if k == 0 {
            0.0
        } else {
            self.breakpoints[k - 1].output_level
        }
    }

    /// `inf { u : R(u) ≥ p }`, clamped to the breakpoint input range.
    pub fn inverse(&self, p: f64) -> f64 {
        let k = self.breakpoints.partition_point(|b| b.output_level < p - LEVEL_SLACK);
        let last = self.breakpoints.len() - 1;
        let u = self.breakpoints[k.min(last)].input_level;
        u.clamp(LEVEL_FLOOR, 1.0 - LEVEL_FLOOR)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for b in &self.breakpoints {
            w.serialize(b)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path)?;
        let breakpoints = r.deserialize().collect::<std::result::Result<Vec<_>, _>>()?;
        Self::from_breakpoints(breakpoints)
    }
}

/// Recalibrated `p`-quantile: `F⁻¹(R⁻¹(p))`.
pub fn apply_recalibration<T: Scalar>(
    recal: &IsotonicRecalibrator,
    pred: &GaussianPrediction<T>,
    p: T,
) -> Result<T> {
    let pf = p.as_f64();
    if !(pf > 0.0 && pf < 1.0) {
        return Err(Error::POutOfRange(pf));
    }
    pred.quantile(T::lit(recal.inverse(pf)))
}

/// Scores recalibrated predictions; means are the model's own.
pub fn isotonic_report<T: Scalar>(
    method: &str,
    recal: &IsotonicRecalibrator,
    preds: &[GaussianPrediction<T>],
    y: &[T],
    grid: &ConfidenceGrid,
) -> Result<CalibrationReport> {
    if preds.len() != y.len() {
        return Err(Error::length("targets", preds.len(), y.len()));
    }
    let mu: Vec<T> = preds.iter().map(|p| p.mu).collect();
    CalibrationReport::from_quantiles(method, y, &mu, grid, DEFAULT_INTERVAL_LEVEL, |i, p| {
        apply_recalibration(recal, &preds[i], p)
    })
}
