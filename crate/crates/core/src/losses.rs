//! Heteroscedastic Gaussian negative log-likelihood in log-variance form.

use crate::autodiff::{Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::{count, Scalar};

/// Mean over the batch of `½·exp(−s)·(y − μ)² + ½·s`.
pub fn nll_loss<'t, T: Scalar>(mu: Var<'t, T>, log_var: Var<'t, T>, y: &[T]) -> Result<Var<'t, T>> {
    let n = mu.shape().iter().product::<usize>();
    if log_var.shape() != mu.shape() {
        return Err(Error::length("log-variance", n, log_var.shape().iter().product()));
    }
    if y.len() != n {
        return Err(Error::length("targets", n, y.len()));
    }
    let half = T::lit(0.5);
    let target = mu.tape().constant(Tensor::new(mu.shape(), y.to_vec())?);
    let precision = log_var.scale(-T::one())?.exp()?;
    let fit = precision.mul(target.sub(mu)?.square()?)?.scale(half)?;
    fit.add(log_var.scale(half)?)?.mean()
}

/// Per-point terms of [`nll_loss`] without a tape.
pub fn nll_terms<T: Scalar>(mu: &[T], log_var: &[T], y: &[T]) -> Result<Vec<T>> {
    if log_var.len() != mu.len() {
        return Err(Error::length("log-variance", mu.len(), log_var.len()));
    }
    if y.len() != mu.len() {
        return Err(Error::length("targets", mu.len(), y.len()));
    }
    let half = T::lit(0.5);
    Ok(mu
        .iter()
        .zip(log_var)
        .zip(y)
        .map(|((&m, &s), &yi)| half * (-s).exp() * (yi - m) * (yi - m) + half * s)
        .collect())
}

pub fn nll_value<T: Scalar>(mu: &[T], log_var: &[T], y: &[T]) -> Result<T> {
    if mu.is_empty() {
        return Err(Error::EmptySample("nll"));
    }
    Ok(nll_terms(mu, log_var, y)?.into_iter().sum::<T>() / count(mu.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{check_many, Tape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eval(mu: &[f64], s: &[f64], y: &[f64]) -> f64 {
        let tape = Tape::new();
        let m = tape.param(Tensor::vector(mu.to_vec()));
        let s = tape.param(Tensor::vector(s.to_vec()));
        nll_loss(m, s, y).unwrap().item().unwrap()
    }

    #[test]
    fn hand_values() {
        assert_eq!(eval(&[2.0], &[0.0], &[2.0]), 0.0);
        assert_eq!(eval(&[0.0], &[0.0], &[1.0]), 0.5);
        assert_eq!(eval(&[0.0], &[2.0], &[0.0]), 1.0);
    }

    #[test]
    fn mean_reduction() {
        let v = eval(&[0.0, 2.0], &[0.0, 0.0], &[1.0, 2.0]);
        assert_eq!(v, 0.25);
    }

    #[test]
    fn length_mismatch() {
        let tape = Tape::new();
        let m = tape.param(Tensor::vector(vec![0.0, 1.0]));
        let s = tape.param(Tensor::vector(vec![0.0, 1.0]));
        assert!(matches!(nll_loss(m, s, &[1.0]), Err(Error::LengthMismatch { .. })));
        let s1 = tape.param(Tensor::vector(vec![0.0]));
        assert!(matches!(nll_loss(m, s1, &[1.0, 2.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn value_path_agrees_with_tape() {
        let mu = [0.1, -0.4, 0.9];
        let s = [0.3, -1.2, 0.0];
        let y = [0.0, 0.5, 1.0];
        assert!((eval(&mu, &s, &y) - nll_value(&mu, &s, &y).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn gradient_check_at_random_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let n = rng.random_range(1..8);
            let mu: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let s: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let report = check_many(
                |v| nll_loss(v[0], v[1], &y),
                &[Tensor::vector(mu), Tensor::vector(s)],
                1e-5,
            )
            .unwrap();
            assert!(report.max_relative_error < 1e-5, "{report:?}");
        }
    }
}
