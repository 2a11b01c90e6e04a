//! Central-difference verification of tape gradients.

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Worst coordinate found by a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck<T> {
    pub max_relative_error: T,
    /// `(input index, flat coordinate)` of the worst coordinate.
    pub worst: (usize, usize),
    pub analytic: T,
    pub numeric: T,
}

/// Compares the tape gradient of a scalar function against central
/// differences and returns `max |analytic − numeric| / max(1, |numeric|)`.
pub fn finite_difference_check<T, F>(f: F, point: &Tensor<T>, eps: T) -> Result<T>
where
    T: Scalar,
    F: for<'t> Fn(&[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    Ok(check_many(f, std::slice::from_ref(point), eps)?.max_relative_error)
}

/// Multi-input form of [`finite_difference_check`]; `f` receives one
/// variable per entry of `points`.
pub fn check_many<T, F>(f: F, points: &[Tensor<T>], eps: T) -> Result<GradCheck<T>>
where
    T: Scalar,
    F: for<'t> Fn(&[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    if !(eps > T::zero()) {
        return Err(Error::Config(format!("finite-difference eps must be positive, got {eps}")));
    }
    let analytic: Vec<Vec<T>> = {
        let tape = Tape::new();
        let vars: Vec<_> = points.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&vars)?;
        tape.backward(loss)?;
        vars.iter()
            .zip(points)
            .map(|(v, p)| {
                v.grad()
                    .map(Tensor::into_data)
                    .unwrap_or_else(|| vec![T::zero(); p.len()])
            })
            .collect()
    };

    let eval = |inputs: &[Tensor<T>]| -> Result<T> {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&vars)?;
        out.item().ok_or_else(|| Error::NotScalar(out.shape()))
    };

    let two = T::lit(2.0);
    let mut report = GradCheck {
        max_relative_error: T::zero(),
        worst: (0, 0),
        analytic: T::zero(),
        numeric: T::zero(),
    };
    let mut work = points.to_vec();
    for (which, point) in points.iter().enumerate() {
        for coord in 0..point.len() {
            let x0 = point.data()[coord];
            work[which].data_mut()[coord] = x0 + eps;
            let up = eval(&work)?;
            work[which].data_mut()[coord] = x0 - eps;
            let down = eval(&work)?;
            work[which].data_mut()[coord] = x0;

            let numeric = (up - down) / (two * eps);
            let a = analytic[which][coord];
            let err = (a - numeric).abs() / numeric.abs().max(T::one());
            if err > report.max_relative_error || err.is_nan() {
                report = GradCheck {
                    max_relative_error: err,
                    worst: (which, coord),
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}
