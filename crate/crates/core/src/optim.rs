//! Adam with L2 weight decay added to the gradient.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
}

impl<T: Scalar> Default for AdamConfig<T> {
    fn default() -> Self {
        AdamConfig {
            lr: T::lit(1e-4),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            weight_decay: T::lit(1e-3),
        }
    }
}

/// First and second moment buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update, in place. The effective gradient is
/// `g + weight_decay · θ`.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    config: &AdamConfig<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.len() || state.v[i].len() != p.len() {
            return Err(Error::shape(
                "adam_step",
                format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let one = T::one();
    let bc1 = one - config.beta1.powi(t);
    let bc2 = one - config.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((theta, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let grad = gi + config.weight_decay * *theta;
            *mi = config.beta1 * *mi + (one - config.beta1) * grad;
            *vi = config.beta2 * *vi + (one - config.beta2) * grad * grad;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *theta = *theta - config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
        if !p.is_finite() {
            return Err(Error::NonFinite("adam update".into()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(weight_decay: f64) -> AdamConfig<f64> {
        AdamConfig {
            lr: 0.01,
            weight_decay,
            ..AdamConfig::default()
        }
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut params = vec![Tensor::vector(vec![2.0, -1.0, 0.0])];
        let grads = vec![Tensor::vector(vec![0.0; 3])];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &cfg(0.0)).unwrap();
        assert_eq!(params[0].data(), &[2.0, -1.0, 0.0]);

        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, &cfg(1e-3)).unwrap();
        let d = params[0].data();
        assert!(d[0] < 2.0 && d[0] > 1.9);
        assert!(d[1] > -1.0 && d[1] < -0.9);
        assert_eq!(d[2], 0.0);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m̂ = g, v̂ = g², so Δθ = −lr·g/(|g| + eps).
        let mut params = vec![Tensor::vector(vec![1.0, 1.0, 1.0])];
        let g = [0.5, -3.0, 1e-3];
        let grads = vec![Tensor::vector(g.to_vec())];
        let mut state = AdamState::new(&params);
        let c = cfg(0.0);
        adam_step(&mut params, &grads, &mut state, &c).unwrap();
        for (theta, gi) in params[0].data().iter().zip(g) {
            let expected = 1.0 - c.lr * gi / (gi.abs() + c.eps);
            assert!((theta - expected).abs() < 1e-15);
            assert!((theta - (1.0 - c.lr * gi.signum())).abs() < 1e-6);
        }
        assert_eq!(state.step, 1);
    }

    #[test]
    fn deterministic_trajectory() {
        let run = || {
            let mut params = vec![Tensor::vector(vec![0.3, -0.7])];
            let mut state = AdamState::new(&params);
            for k in 0..50 {
                let g: Vec<f64> = params[0].data().iter().map(|x| 2.0 * x + k as f64 * 1e-3).collect();
                adam_step(&mut params, &[Tensor::vector(g)], &mut state, &cfg(1e-3)).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch() {
        let mut params = vec![Tensor::vector(vec![1.0, 2.0])];
        let mut state = AdamState::new(&params);
        let bad = vec![Tensor::vector(vec![1.0])];
        assert!(matches!(
            adam_step(&mut params, &bad, &mut state, &cfg(0.0)),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            adam_step(&mut params, &[], &mut state, &cfg(0.0)),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn minimizes_quadratic() {
        let mut params = vec![Tensor::vector(vec![3.0])];
        let mut state = AdamState::new(&params);
        let c = AdamConfig { lr: 0.1, ..cfg(0.0) };
        for _ in 0..500 {
            let g = vec![Tensor::vector(vec![2.0 * (params[0].data()[0] - 1.0)])];
            adam_step(&mut params, &g, &mut state, &c).unwrap();
        }
        assert!((params[0].data()[0] - 1.0).abs() < 1e-2);
    }
}
