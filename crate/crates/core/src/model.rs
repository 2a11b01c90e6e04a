//! Heteroscedastic MLP: a shared two-hidden-layer ReLU trunk with a linear
//! head emitting `(μ, s)` per row, where `s = log σ²`.
//!
//! Checkpoint format (JSON, stable):
//!
//! ```text
//! {
//!   "format": "mmdcal-hnn",
//!   "version": 1,
//!   "input_dim": 1, "hidden_dim": 256, "seed": 42,
//!   "layers": [ { "name": "w1", "shape": [1, 256], "data": [...] }, ... ]
//! }
//! ```
//!
//! Layers appear in the order `w1 b1 w2 b2 w3 b3`; weight matrices are
//! `fan_in × fan_out` row-major, and column 0 of `w3`/`b3` feeds μ, column 1 feeds s.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::metrics::normal;
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "mmdcal-hnn";
pub const CHECKPOINT_VERSION: u32 = 1;
const LAYER_NAMES: [&str; 6] = ["w1", "b1", "w2", "b2", "w3", "b3"];

/// Per-input Gaussian predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianPrediction<T> {
    pub mu: T,
    pub sigma: T,
}

impl<T: Scalar> GaussianPrediction<T> {
    pub fn new(mu: T, sigma: T) -> Self {
        GaussianPrediction { mu, sigma }
    }

    /// From mean and log-variance: σ = exp(s / 2).
    pub fn from_log_variance(mu: T, s: T) -> Self {
        GaussianPrediction {
            mu,
            sigma: (s * T::lit(0.5)).exp(),
        }
    }

    pub fn cdf(&self, y: T) -> T {
        normal::cdf((y - self.mu) / self.sigma)
    }

    /// Quantile function F⁻¹(p) = μ + σ Φ⁻¹(p).
    pub fn quantile(&self, p: T) -> Result<T> {
        Ok(self.mu + self.sigma * normal::inverse_cdf(p)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HnnModel<T> {
    input_dim: usize,
    hidden_dim: usize,
    seed: u64,
    params: Vec<Tensor<T>>,
}

/// Tape bindings from one forward pass.
pub struct Forward<'t, T: Scalar> {
    /// Parameter leaves, in checkpoint layer order.
    pub params: Vec<Var<'t, T>>,
    pub mu: Var<'t, T>,
    pub log_var: Var<'t, T>,
}

impl<T: Scalar> HnnModel<T> {
    /// Glorot-uniform weights, zero biases.
    pub fn init(input_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config(format!(
                "model dims must be positive, got input {input_dim}, hidden {hidden_dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |fan_in: usize, fan_out: usize| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| T::lit(rng.random_range(-a..a)))
                .collect();
            Tensor::matrix(fan_in, fan_out, data).expect("layer shape")
        };
        let w1 = glorot(input_dim, hidden_dim);
        let w2 = glorot(hidden_dim, hidden_dim);
        let w3 = glorot(hidden_dim, 2);
        let params = vec![
            w1,
            Tensor::zeros(vec![hidden_dim]),
            w2,
            Tensor::zeros(vec![hidden_dim]),
            w3,
            Tensor::zeros(vec![2]),
        ];
        Ok(HnnModel {
            input_dim,
            hidden_dim,
            seed,
            params,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        match x.dims2() {
            Some((_, c)) if c == self.input_dim => Ok(()),
            _ => Err(Error::shape(
                "hnn forward",
                format!("expected n x {}, got {:?}", self.input_dim, x.shape()),
            )),
        }
    }

    /// Forward pass with parameters registered as trainable leaves.
    pub fn forward<'t>(&self, tape: &'t Tape<T>, x: &Tensor<T>) -> Result<Forward<'t, T>> {
        self.check_input(x)?;
        let params: Vec<_> = self.params.iter().map(|p| tape.param(p.clone())).collect();
        let xv = tape.constant(x.clone());
        let (mu, log_var) = hnn_forward(&params, xv)?;
        Ok(Forward {
            params,
            mu,
            log_var,
        })
    }

    /// `(μ, s)` per row without gradient tracking.
    pub fn predict_raw(&self, x: &Tensor<T>) -> Result<(Vec<T>, Vec<T>)> {
        self.check_input(x)?;
        let tape = Tape::new();
        let params: Vec<_> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let (mu, s) = hnn_forward(&params, tape.constant(x.clone()))?;
        Ok((mu.value().into_data(), s.value().into_data()))
    }

    pub fn predict_distribution(&self, x: &Tensor<T>) -> Result<Vec<GaussianPrediction<T>>> {
        let (mu, s) = self.predict_raw(x)?;
        Ok(mu
            .into_iter()
            .zip(s)
            .map(|(m, s)| GaussianPrediction::from_log_variance(m, s))
            .collect())
    }

    /// Multiplies every predictive σ by `factor` by shifting the log-variance bias.
    pub fn scale_sigma(&mut self, factor: T) {
        let shift = T::lit(2.0) * factor.ln();
        let b3 = self.params[5].data_mut();
        b3[1] = b3[1] + shift;
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            seed: self.seed,
            layers: LAYER_NAMES
                .iter()
                .zip(&self.params)
                .map(|(name, p)| LayerRecord {
                    name: (*name).to_string(),
                    shape: p.shape().to_vec(),
                    data: p.data().iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        };
        fs::write(path, serde_json::to_string(&file)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        let file: CheckpointFile = serde_json::from_str(&fs::read_to_string(path)?)?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        let template = Self::init(file.input_dim, file.hidden_dim, file.seed)?;
        if file.layers.len() != LAYER_NAMES.len() {
            return Err(Error::Config(format!("checkpoint has {} layers", file.layers.len())));
        }
        let mut params = Vec::with_capacity(LAYER_NAMES.len());
        for ((record, name), expected) in file.layers.into_iter().zip(LAYER_NAMES).zip(&template.params) {
            if record.name != name || record.shape != expected.shape() {
                return Err(Error::Config(format!(
                    "checkpoint layer {} {:?} does not match {name} {:?}",
                    record.name,
                    record.shape,
                    expected.shape()
                )));
            }
            let data = record.data.into_iter().map(T::lit).collect();
            params.push(Tensor::new(record.shape, data)?);
        }
        Ok(HnnModel { params, ..template })
    }
}

/// Forward pass over parameter variables in checkpoint layer order, returning `(μ, s)`.
pub fn hnn_forward<'t, T: Scalar>(p: &[Var<'t, T>], x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
    let h1 = x.matmul(p[0])?.add_row(p[1])?.relu()?;
    let h2 = h1.matmul(p[2])?.add_row(p[3])?.relu()?;
    let out = h2.matmul(p[4])?.add_row(p[5])?;
    Ok((out.column(0)?, out.column(1)?))
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    input_dim: usize,
    hidden_dim: usize,
    seed: u64,
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}
