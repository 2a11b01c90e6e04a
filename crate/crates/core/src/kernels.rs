//! RBF kernel mixtures and the squared maximum mean discrepancy between
//! observed targets and samples drawn from the model's predictive
//! distribution.
//!
//! The training loss is the biased (V-statistic) estimator
//!
//! ```text
//! MMD² = 1/N² Σᵢⱼ k(yᵢ, yⱼ) + 1/M² Σᵢⱼ k(ŷᵢ, ŷⱼ) − 2/(NM) Σᵢⱼ k(yᵢ, ŷⱼ)
//! ```
//!
//! with `k(a, b) = Σₛ exp(−(a − b)² / (2σₛ²))`. It is exposed to the tape as a
//! fused primitive so gradients reach the model samples without general
//! broadcasting.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Primitive, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::GaussianPrediction;
use crate::scalar::{count, Scalar};

pub const DEFAULT_BANDWIDTHS: [f64; 6] = [1.0, 4.0, 8.0, 16.0, 32.0, 64.0];

/// Sum of RBF kernels with the given bandwidths.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMixture<T> {
    bandwidths: Vec<T>,
}

impl<T: Scalar> KernelMixture<T> {
    pub fn new(bandwidths: Vec<T>) -> Result<Self> {
        if bandwidths.is_empty() {
            return Err(Error::Config("kernel mixture needs at least one bandwidth".into()));
        }
        if let Some(b) = bandwidths.iter().find(|b| !(b.is_finite() && **b > T::zero())) {
            return Err(Error::Config(format!("bandwidth must be positive and finite, got {b}")));
        }
        Ok(KernelMixture { bandwidths })
    }

    pub fn from_f64(bandwidths: &[f64]) -> Result<Self> {
        Self::new(bandwidths.iter().map(|&b| T::lit(b)).collect())
    }

    pub fn bandwidths(&self) -> &[T] {
        &self.bandwidths
    }

    pub fn len(&self) -> usize {
        self.bandwidths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bandwidths.is_empty()
    }

    /// `−1 / (2σ²)` per bandwidth.
    fn coefficients(&self) -> Vec<T> {
        let half = T::lit(-0.5);
        self.bandwidths.iter().map(|&s| half / (s * s)).collect()
    }
}

impl<T: Scalar> Default for KernelMixture<T> {
    fn default() -> Self {
        Self::from_f64(&DEFAULT_BANDWIDTHS).expect("default bandwidths")
    }
}

/// `exp(−(a − b)² / (2σ²))`.
pub fn rbf_kernel<T: Scalar>(a: T, b: T, sigma: T) -> T {
    let d = a - b;
    (-(d * d) / (T::lit(2.0) * sigma * sigma)).exp()
}

pub fn mixture_kernel<T: Scalar>(a: T, b: T, mixture: &KernelMixture<T>) -> T {
    mixture.bandwidths.iter().map(|&s| rbf_kernel(a, b, s)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Biased,
    Unbiased,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdEstimate<T> {
    pub value: T,
    pub kind: EstimatorKind,
    pub n_real: usize,
    pub n_model: usize,
}

/// Σᵢⱼ k(aᵢ, bⱼ), optionally skipping i == j.
fn block_sum<T: Scalar>(a: &[T], b: &[T], coef: &[T], skip_diagonal: bool) -> T {
    let mut total = T::zero();
    for (i, &ai) in a.iter().enumerate() {
        let mut row = T::zero();
        for (j, &bj) in b.iter().enumerate() {
            if skip_diagonal && i == j {
                continue;
            }
            let d2 = (ai - bj) * (ai - bj);
            for &c in coef {
                row = row + (c * d2).exp();
            }
        }
        total = total + row;
    }
    total
}

/// Σᵢⱼ k(aᵢ, aⱼ) using symmetry: diagonal contributes K per element.
fn self_block_sum<T: Scalar>(a: &[T], coef: &[T], skip_diagonal: bool) -> T {
    let mut off = T::zero();
    for i in 0..a.len() {
        for j in (i + 1)..a.len() {
            let d2 = (a[i] - a[j]) * (a[i] - a[j]);
            for &c in coef {
                off = off + (c * d2).exp();
            }
        }
    }
    let diag = if skip_diagonal {
        T::zero()
    } else {
        count::<T>(a.len() * coef.len())
    };
    diag + T::lit(2.0) * off
}

fn check_samples<T>(real: &[T], model: &[T]) -> Result<()> {
    if real.is_empty() || model.is_empty() {
        return Err(Error::EmptySample("mmd2"));
    }
    Ok(())
}

fn biased_value<T: Scalar>(real: &[T], model: &[T], coef: &[T]) -> T {
    let (n, m) = (count::<T>(real.len()), count::<T>(model.len()));
    self_block_sum(real, coef, false) / (n * n) + self_block_sum(model, coef, false) / (m * m)
        - T::lit(2.0) * block_sum(real, model, coef, false) / (n * m)
}

/// Biased squared MMD on plain values.
pub fn mmd2_biased_value<T: Scalar>(
    real: &[T],
    model: &[T],
    mixture: &KernelMixture<T>,
) -> Result<MmdEstimate<T>> {
    check_samples(real, model)?;
    Ok(MmdEstimate {
        value: biased_value(real, model, &mixture.coefficients()),
        kind: EstimatorKind::Biased,
        n_real: real.len(),
        n_model: model.len(),
    })
}

/// Unbiased (U-statistic) squared MMD, for diagnostics. Needs two or more
/// samples on each side.
pub fn mmd2_unbiased<T: Scalar>(
    real: &[T],
    model: &[T],
    mixture: &KernelMixture<T>,
) -> Result<MmdEstimate<T>> {
    check_samples(real, model)?;
    if real.len() < 2 || model.len() < 2 {
        return Err(Error::EmptySample("mmd2_unbiased (needs >= 2 per side)"));
    }
    let coef = mixture.coefficients();
    let (n, m) = (count::<T>(real.len()), count::<T>(model.len()));
    let value = self_block_sum(real, &coef, true) / (n * (n - T::one()))
        + self_block_sum(model, &coef, true) / (m * (m - T::one()))
        - T::lit(2.0) * block_sum(real, model, &coef, false) / (n * m);
    Ok(MmdEstimate {
        value,
        kind: EstimatorKind::Unbiased,
        n_real: real.len(),
        n_model: model.len(),
    })
}

struct Mmd2Primitive<T> {
    real: Vec<T>,
    coef: Vec<T>,
}

impl<T: Scalar> Primitive<T> for Mmd2Primitive<T> {
    fn name(&self) -> &'static str {
        "mmd2_biased"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, grad_out: &[T]) -> Vec<Vec<T>> {
        // ∂k_σ(a, b)/∂b = k_σ(a, b) (a − b) / σ² = −2c k (a − b) with c = −1/(2σ²).
        let model = inputs[0].data();
        let (n, m) = (count::<T>(self.real.len()), count::<T>(model.len()));
        let two = T::lit(2.0);
        let self_scale = two / (m * m);
        let cross_scale = two / (n * m);
        let g = grad_out[0];
        let grads = model
            .iter()
            .map(|&yj| {
                let mut self_term = T::zero();
                for &yi in model {
                    let d = yi - yj;
                    for &c in &self.coef {
                        self_term = self_term - two * c * (c * d * d).exp() * d;
                    }
                }
                let mut cross_term = T::zero();
                for &ri in &self.real {
                    let d = ri - yj;
                    for &c in &self.coef {
                        cross_term = cross_term - two * c * (c * d * d).exp() * d;
                    }
                }
                g * (self_scale * self_term - cross_scale * cross_term)
            })
            .collect();
        vec![grads]
    }
}

/// Biased squared MMD between fixed targets and a vector of model samples on
/// the tape. Returns a shape-`[]` variable differentiable w.r.t. `model`.
pub fn mmd2_biased<'t, T: Scalar>(
    real: &[T],
    model: Var<'t, T>,
    mixture: &KernelMixture<T>,
) -> Result<Var<'t, T>> {
    let samples = model.value();
    if samples.shape().len() != 1 {
        return Err(Error::shape("mmd2_biased", format!("model samples {:?}", samples.shape())));
    }
    check_samples(real, samples.data())?;
    let coef = mixture.coefficients();
    let value = biased_value(real, samples.data(), &coef);
    model.tape().custom(
        &[model],
        Tensor::scalar(value),
        Box::new(Mmd2Primitive {
            real: real.to_vec(),
            coef,
        }),
    )
}

/// Reparameterized samples `ŷ = μ + exp(s/2)·ε` on the tape.
///
/// With `reparameterized == false` the samples are recorded as a constant
/// and no gradient reaches `mu` or `log_var`.
pub fn sample_predictions<'t, T: Scalar>(
    mu: Var<'t, T>,
    log_var: Var<'t, T>,
    noise: &[T],
    reparameterized: bool,
) -> Result<Var<'t, T>> {
    let n = mu.shape().iter().product::<usize>();
    if noise.len() != n {
        return Err(Error::length("noise draws", n, noise.len()));
    }
    let tape = mu.tape();
    let eps = tape.constant(Tensor::new(mu.shape(), noise.to_vec())?);
    let samples = log_var.scale(T::lit(0.5))?.exp()?.mul(eps)?.add(mu)?;
    if reparameterized {
        Ok(samples)
    } else {
        Ok(tape.constant(samples.value()))
    }
}

/// Sample values from fixed predictions.
pub fn sample_values<T: Scalar>(preds: &[GaussianPrediction<T>], noise: &[T]) -> Result<Vec<T>> {
    if noise.len() != preds.len() {
        return Err(Error::length("noise draws", preds.len(), noise.len()));
    }
    Ok(preds.iter().zip(noise).map(|(p, &e)| p.mu + p.sigma * e).collect())
}

/// Permutation p-value for H₀: both samples share a distribution, using the
/// biased MMD² statistic on the pooled sample.
pub fn permutation_two_sample_test<T: Scalar>(
    real: &[T],
    model: &[T],
    mixture: &KernelMixture<T>,
    n_permutations: usize,
    seed: u64,
) -> Result<f64> {
    check_samples(real, model)?;
    if n_permutations < 100 {
        return Err(Error::Config(format!("need at least 100 permutations, got {n_permutations}")));
    }
    let pooled: Vec<T> = real.iter().chain(model).copied().collect();
    let total = pooled.len();
    let coef = mixture.coefficients();
    let mut gram = vec![T::zero(); total * total];
    for i in 0..total {
        for j in i..total {
            let d2 = (pooled[i] - pooled[j]) * (pooled[i] - pooled[j]);
            let k: T = coef.iter().map(|&c| (c * d2).exp()).sum();
            gram[i * total + j] = k;
            gram[j * total + i] = k;
        }
    }
    let n = real.len();
    let statistic = |order: &[usize]| -> f64 {
        let (a, b) = order.split_at(n);
        let block = |x: &[usize], y: &[usize]| -> f64 {
            x.iter()
                .map(|&i| y.iter().map(|&j| gram[i * total + j].as_f64()).sum::<f64>())
                .sum()
        };
        let (nf, mf) = (a.len() as f64, b.len() as f64);
        block(a, a) / (nf * nf) + block(b, b) / (mf * mf) - 2.0 * block(a, b) / (nf * mf)
    };
    let mut order: Vec<usize> = (0..total).collect();
    let observed = statistic(&order);
    let threshold = observed - 1e-12 * observed.abs().max(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut at_least = 0usize;
    for _ in 0..n_permutations {
        order.shuffle(&mut rng);
        if statistic(&order) >= threshold {
            at_least += 1;
        }
    }
    Ok(at_least as f64 / n_permutations as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, Tape};
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn single() -> KernelMixture<f64> {
        KernelMixture::new(vec![1.0]).unwrap()
    }

    #[test]
    fn rbf_values() {
        assert_eq!(rbf_kernel(0.7f64, 0.7, 3.0), 1.0);
        assert!((rbf_kernel(0.0f64, 1.0, 1.0) - 0.6065306597).abs() < 1e-10);
        assert!((rbf_kernel(0.0f64, 1.0, 1e9) - 1.0).abs() < 1e-15);
        assert_eq!(rbf_kernel(0.2f64, 1.3, 2.0), rbf_kernel(1.3, 0.2, 2.0));
    }

    #[test]
    fn mixture_values() {
        let mix = KernelMixture::<f64>::default();
        assert_eq!(mix.len(), 6);
        assert!((mixture_kernel(0.4, 0.4, &mix) - 6.0).abs() < 1e-15);
        assert!((mixture_kernel(0.0, 1.0, &single()) - 0.6065306597).abs() < 1e-10);
        assert_eq!(mixture_kernel(0.1, 0.9, &mix), mixture_kernel(0.9, 0.1, &mix));
    }

    #[test]
    fn mixture_validation() {
        assert!(KernelMixture::<f64>::new(vec![]).is_err());
        assert!(KernelMixture::<f64>::new(vec![1.0, 0.0]).is_err());
        assert!(KernelMixture::<f64>::new(vec![f64::INFINITY]).is_err());
        assert!(KernelMixture::<f64>::new(vec![-2.0]).is_err());
    }

    #[test]
    fn identical_samples_give_zero() {
        let v = [0.3f64, 0.7];
        let e = mmd2_biased_value(&v, &v, &KernelMixture::default()).unwrap();
        assert!(e.value.abs() < 1e-12);
        assert_eq!(e.kind, EstimatorKind::Biased);
    }

    #[test]
    fn single_point_hand_expansion() {
        let expected = 2.0 - 2.0 * (-0.5f64).exp();
        assert!((expected - 0.7869386806).abs() < 1e-10);
        let e = mmd2_biased_value(&[0.0], &[1.0], &single()).unwrap();
        assert!((e.value - expected).abs() < 1e-15);

        let tape = Tape::new();
        let m = tape.param(Tensor::vector(vec![1.0]));
        let loss = mmd2_biased(&[0.0], m, &single()).unwrap();
        assert!((loss.item().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn empty_sample_rejected() {
        let mix = single();
        assert!(matches!(mmd2_biased_value(&[], &[1.0], &mix), Err(Error::EmptySample(_))));
        assert!(matches!(mmd2_biased_value(&[1.0], &[], &mix), Err(Error::EmptySample(_))));
        let tape = Tape::new();
        let m = tape.param(Tensor::vector(vec![]));
        assert!(matches!(mmd2_biased(&[1.0], m, &mix), Err(Error::EmptySample(_))));
    }

    #[test]
    fn tape_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mix = KernelMixture::<f64>::from_f64(&[0.2, 1.0, 4.0]).unwrap();
        for _ in 0..20 {
            let real: Vec<f64> = (0..7).map(|_| rng.random::<f64>()).collect();
            let model: Vec<f64> = (0..5).map(|_| rng.random::<f64>()).collect();
            let err = finite_difference_check(
                |v| mmd2_biased(&real, v[0], &mix),
                &Tensor::vector(model),
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-5, "err = {err}");
        }
    }

    #[test]
    fn unbiased_estimator_is_near_zero_for_same_law() {
        // Null std of one replicate at n = 100 is about 0.022 for this mixture,
        // so the mean of 40 replicates sits within ~0.0035 of zero.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mix = KernelMixture::from_f64(&[0.5, 1.0, 2.0]).unwrap();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let (mut u_sum, mut b_sum) = (0.0, 0.0);
        for _ in 0..40 {
            let (a, b) = (draw(100), draw(100));
            let u = mmd2_unbiased(&a, &b, &mix).unwrap();
            assert_eq!(u.kind, EstimatorKind::Unbiased);
            u_sum += u.value;
            b_sum += mmd2_biased_value(&a, &b, &mix).unwrap().value;
        }
        assert!((u_sum / 40.0).abs() < 0.012, "{}", u_sum / 40.0);
        assert!(b_sum > u_sum);
        assert!(mmd2_unbiased(&[1.0], &draw(5), &mix).is_err());
    }

    #[test]
    fn monotone_in_separation() {
        let mix = KernelMixture::<f64>::default();
        let zeros = vec![0.0; 10];
        let mut prev = -1.0;
        for k in 0..=20 {
            let c = k as f64 * 0.1;
            let v = mmd2_biased_value(&zeros, &vec![c; 10], &mix).unwrap().value;
            assert!(v >= prev, "c={c}");
            prev = v;
        }
    }

    #[test]
    fn sampling_is_affine_in_noise() {
        let tape = Tape::new();
        let mu = tape.param(Tensor::vector(vec![0.0, 1.0]));
        let s = tape.param(Tensor::vector(vec![2.0 * 2f64.ln(), 0.3]));
        let y = sample_predictions(mu, s, &[1.5, 0.0], true).unwrap();
        let vals = y.value();
        assert!((vals.data()[0] - 3.0).abs() < 1e-14);
        assert_eq!(vals.data()[1], 1.0);
        assert!(sample_predictions(mu, s, &[1.0], true).is_err());
    }

    #[test]
    fn pathwise_gradients() {
        // ∂ŷ/∂μ = 1, ∂ŷ/∂s = σε/2
        let tape = Tape::new();
        let mu = tape.param(Tensor::vector(vec![0.4]));
        let s = tape.param(Tensor::vector(vec![0.6]));
        let eps = 1.3;
        let y = sample_predictions(mu, s, &[eps], true).unwrap();
        tape.backward(y.sum().unwrap()).unwrap();
        assert_eq!(mu.grad().unwrap().data(), &[1.0]);
        let sigma = (0.3f64).exp();
        assert!((s.grad().unwrap().data()[0] - 0.5 * sigma * eps).abs() < 1e-14);

        let tape = Tape::new();
        let mu = tape.param(Tensor::vector(vec![0.4]));
        let s = tape.param(Tensor::vector(vec![0.6]));
        let y = sample_predictions(mu, s, &[eps], false).unwrap();
        assert!(!y.requires_grad());
    }

    #[test]
    fn zero_noise_returns_means() {
        let preds = [GaussianPrediction::new(1.0f64, 2.0), GaussianPrediction::new(-3.0, 0.1)];
        assert_eq!(sample_values(&preds, &[0.0, 0.0]).unwrap(), vec![1.0, -3.0]);
    }

    #[test]
    fn monte_carlo_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 100_000;
        let preds = vec![GaussianPrediction::new(1.0f64, 0.5); n];
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let ys = sample_values(&preds, &noise).unwrap();
        let mean = ys.iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01);
    }

    #[test]
    fn permutation_test_identical_and_separated() {
        let mix = KernelMixture::<f64>::default();
        let v: Vec<f64> = (0..30).map(|i| i as f64 / 30.0).collect();
        assert_eq!(permutation_two_sample_test(&v, &v, &mix, 100, 1).unwrap(), 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..200)
            .map(|_| 3.0 + Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        assert!(permutation_two_sample_test(&a, &b, &mix, 200, 2).unwrap() < 0.01);
        assert!(permutation_two_sample_test(&a, &b, &mix, 50, 2).is_err());
    }
}
