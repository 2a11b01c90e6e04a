use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Point-forecast accuracy. `r2` and `rse` are `None` when the targets have
/// zero variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub rmse: f64,
    pub r2: Option<f64>,
    pub rse: Option<f64>,
    /// Percent.
    pub smape: f64,
}

/// RMSE, R², root relative squared error and SMAPE.
///
/// Fails with [`Error::DegenerateVariance`] on constant targets; use
/// [`accuracy_lenient`] to get nulls instead.
pub fn accuracy_metrics<T: Scalar>(y_true: &[T], y_pred: &[T]) -> Result<Accuracy> {
    let acc = accuracy_lenient(y_true, y_pred)?;
    if acc.r2.is_none() {
        return Err(Error::DegenerateVariance);
    }
    Ok(acc)
}

pub fn accuracy_lenient<T: Scalar>(y_true: &[T], y_pred: &[T]) -> Result<Accuracy> {
    if y_true.len() != y_pred.len() {
        return Err(Error::length("predictions", y_true.len(), y_pred.len()));
    }
    if y_true.is_empty() {
        return Err(Error::EmptySample("accuracy_metrics"));
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let mut sse = 0.0;
    let mut sst = 0.0;
    let mut smape = 0.0;
    for (&y, &yh) in y_true.iter().zip(y_pred) {
        let (y, yh) = (y.as_f64(), yh.as_f64());
        sse += (y - yh) * (y - yh);
        sst += (y - mean) * (y - mean);
        let denom = (y.abs() + yh.abs()) / 2.0;
        // 0/0 terms contribute nothing.
        if denom > 0.0 {
            smape += (yh - y).abs() / denom;
        }
    }
    let (r2, rse) = if sst > 0.0 {
        (Some(1.0 - sse / sst), Some(sse.sqrt() / sst.sqrt()))
    } else {
        (None, None)
    };
    Ok(Accuracy {
        rmse: (sse / n).sqrt(),
        r2,
        rse,
        smape: 100.0 * smape / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let y = [1.0f64, -2.0, 3.5];
        let a = accuracy_metrics(&y, &y).unwrap();
        assert_eq!(a.rmse, 0.0);
        assert_eq!(a.smape, 0.0);
        assert_eq!(a.rse, Some(0.0));
        assert_eq!(a.r2, Some(1.0));
    }

    #[test]
    fn two_point_hand_example() {
        let a = accuracy_metrics(&[0.0f64, 2.0], &[1.0, 1.0]).unwrap();
        assert!((a.rmse - 1.0).abs() < 1e-15);
        assert!(a.r2.unwrap().abs() < 1e-15);
        assert!((a.rse.unwrap() - 1.0).abs() < 1e-15);
        // (200% + 66.67%) / 2
        assert!((a.smape - 400.0 / 3.0).abs() < 1e-9, "{}", a.smape);
    }

    #[test]
    fn constant_targets_are_degenerate() {
        assert!(matches!(
            accuracy_metrics(&[2.0f64, 2.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::DegenerateVariance)
        ));
        let a = accuracy_lenient(&[2.0f64, 2.0], &[1.0, 3.0]).unwrap();
        assert!(a.r2.is_none() && a.rse.is_none());
        assert!((a.rmse - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_over_zero_smape_term_is_skipped() {
        let a = accuracy_lenient(&[0.0f64, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(a.smape, 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            accuracy_metrics(&[1.0f64], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }
}
