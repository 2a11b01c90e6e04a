//! Two-stage training: NLL warm-up of the HNN, then MMD fine-tuning on
//! reparameterized samples. Each stage runs once, in order.

use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::data::Samples;
use crate::error::{Error, Result};
use crate::kernels::{mmd2_biased, sample_predictions, KernelMixture, DEFAULT_BANDWIDTHS};
use crate::losses::{nll_loss, nll_value};
use crate::metrics::{ecpe, empirical_coverage, ConfidenceGrid};
use crate::model::HnnModel;
use crate::optim::{adam_step, AdamConfig, AdamState};
use crate::scalar::Scalar;

/// Parameters updated during MMD fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stage2Scope {
    #[default]
    All,
    /// Only the log-variance output column and its bias.
    VarianceHead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub bandwidths: Vec<f64>,
    /// Epochs without validation improvement before a stage stops.
    pub convergence_patience: usize,
    pub stage2_scope: Stage2Scope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            weight_decay: 1e-3,
            batch_size: 128,
            stage1_epochs: 200,
            stage2_epochs: 100,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            bandwidths: DEFAULT_BANDWIDTHS.to_vec(),
            convergence_patience: 20,
            stage2_scope: Stage2Scope::All,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.stage1_epochs == 0 {
            return bad("stage1_epochs must be at least 1".into());
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if self.convergence_patience == 0 {
            return bad("convergence_patience must be at least 1".into());
        }
        KernelMixture::<f64>::from_f64(&self.bandwidths)?;
        Ok(())
    }

    fn adam<T: Scalar>(&self) -> AdamConfig<T> {
        AdamConfig {
            lr: T::lit(self.lr),
            beta1: T::lit(self.adam_beta1),
            beta2: T::lit(self.adam_beta2),
            eps: T::lit(self.adam_eps),
            weight_decay: T::lit(self.weight_decay),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stage: u8,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_nll: f64,
    pub val_ecpe: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn stage(&self, stage: u8) -> impl Iterator<Item = &TraceRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.records {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let records = r.deserialize().collect::<std::result::Result<_, _>>()?;
        Ok(TrainTrace { records })
    }
}

/// Mean NLL over a split, without a tape.
pub fn evaluate_nll<T: Scalar>(model: &HnnModel<T>, split: &Samples<T>) -> Result<T> {
    if split.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let (mu, s) = model.predict_raw(&split.x)?;
    nll_value(&mu, &s, &split.y)
}

/// Two-sided ECPE over the default 19-level grid.
pub fn evaluate_ecpe<T: Scalar>(model: &HnnModel<T>, split: &Samples<T>) -> Result<T> {
    if split.is_empty() {
        return Err(Error::EmptySplit("evaluation"));
    }
    let grid = ConfidenceGrid::default();
    let preds = model.predict_distribution(&split.x)?;
    ecpe(&grid, &empirical_coverage(&preds, &split.y, &grid)?)
}

fn check_splits<T: Scalar>(train: &Samples<T>, val: &Samples<T>, model: &HnnModel<T>) -> Result<()> {
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(Error::EmptySplit("validation"));
    }
    for s in [train, val] {
        if s.n_features() != model.input_dim() {
            return Err(Error::shape(
                "training split",
                format!("{} features for a model with input {}", s.n_features(), model.input_dim()),
            ));
        }
    }
    Ok(())
}

/// Which validation metric a stage monitors for patience.
#[derive(Clone, Copy)]
enum Monitor {
    Nll,
    Ecpe,
}

struct Stage<'a, T: Scalar> {
    stage: u8,
    epochs: usize,
    monitor: Monitor,
    scope: Stage2Scope,
    config: &'a TrainConfig,
    train: &'a Samples<T>,
    val: &'a Samples<T>,
}

impl<T: Scalar> Stage<'_, T> {
    /// Runs minibatch epochs, keeping the parameters of the best validation
    /// epoch. `step` computes one batch loss on the tape and returns it.
    fn run<F>(&self, mut model: HnnModel<T>, trace: &mut TrainTrace, rng: &mut ChaCha8Rng, mut step: F) -> Result<HnnModel<T>>
    where
        F: FnMut(&HnnModel<T>, &Samples<T>, &mut ChaCha8Rng) -> Result<(T, Vec<Tensor<T>>)>,
    {
        let adam = self.config.adam();
        let mut state = AdamState::new(model.params());
        let mut best = model.clone();
        let mut best_score = f64::INFINITY;
        let mut stale = 0;
        let n = self.train.len();
        let mut order: Vec<usize> = (0..n).collect();
        let frozen = model.clone();
        for epoch in 1..=self.epochs {
            let diverged = |source: Error| Error::Diverged {
                stage: self.stage,
                epoch,
                source: Box::new(source),
            };
            order.shuffle(rng);
            let mut loss_sum = 0.0;
            for chunk in order.chunks(self.config.batch_size) {
                let batch = self.train.select(chunk)?;
                let (loss, grads) = step(&model, &batch, rng).map_err(|e| match e {
                    Error::NonFinite(_) => diverged(e),
                    e => e,
                })?;
                if !loss.is_finite() {
                    return Err(diverged(Error::NonFinite(format!("stage {} loss", self.stage))));
                }
                adam_step(model.params_mut(), &grads, &mut state, &adam).map_err(diverged)?;
                if self.scope == Stage2Scope::VarianceHead {
                    restore_outside_variance_head(&mut model, &frozen);
                }
                loss_sum += loss.as_f64() * chunk.len() as f64;
            }
            let val_nll = evaluate_nll(&model, self.val).map_err(diverged)?.as_f64();
            let val_ecpe = evaluate_ecpe(&model, self.val).map_err(diverged)?.as_f64();
            let record = TraceRecord {
                stage: self.stage,
                epoch,
                train_loss: loss_sum / n as f64,
                val_nll,
                val_ecpe,
            };
            debug!("{record:?}");
            trace.records.push(record);
            if !val_nll.is_finite() {
                return Err(diverged(Error::NonFinite("validation NLL".into())));
            }
            let score = match self.monitor {
                Monitor::Nll => val_nll,
                Monitor::Ecpe => val_ecpe,
            };
            if score < best_score {
                best_score = score;
                best = model.clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= self.config.convergence_patience {
                    info!("stage {} stopped at epoch {epoch}", self.stage);
                    break;
                }
            }
        }
        Ok(best)
    }
}

fn gradients<T: Scalar>(tape: &Tape<T>, params: &[crate::autodiff::Var<'_, T>]) -> Vec<Tensor<T>> {
    params
        .iter()
        .map(|p| tape.grad(*p).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect()
}

/// NLL minimization over minibatches; patience on validation NLL.
pub fn train_stage1<T: Scalar>(
    model: HnnModel<T>,
    train: &Samples<T>,
    val: &Samples<T>,
    config: &TrainConfig,
    trace: &mut TrainTrace,
) -> Result<HnnModel<T>> {
    config.validate()?;
    check_splits(train, val, &model)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let stage = Stage {
        stage: 1,
        epochs: config.stage1_epochs,
        monitor: Monitor::Nll,
        scope: Stage2Scope::All,
        config,
        train,
        val,
    };
    stage.run(model, trace, &mut rng, |m, batch, _| {
        let tape = Tape::new();
        let fwd = m.forward(&tape, &batch.x)?;
        let loss = nll_loss(fwd.mu, fwd.log_var, &batch.y)?;
        tape.backward(loss)?;
        Ok((loss.item().expect("scalar loss"), gradients(&tape, &fwd.params)))
    })
}

/// Minibatch MMD² between targets and reparameterized samples, with fresh
/// noise each step; patience on validation ECPE.
pub fn train_stage2<T: Scalar>(
    model: HnnModel<T>,
    train: &Samples<T>,
    val: &Samples<T>,
    config: &TrainConfig,
    trace: &mut TrainTrace,
) -> Result<HnnModel<T>> {
    config.validate()?;
    check_splits(train, val, &model)?;
    if config.stage2_epochs == 0 {
        return Ok(model);
    }
    let mixture = KernelMixture::<T>::from_f64(&config.bandwidths)?;
    // Distinct stream from stage 1 so its draws do not depend on stage-1 length.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
    let stage = Stage {
        stage: 2,
        epochs: config.stage2_epochs,
        monitor: Monitor::Ecpe,
        scope: config.stage2_scope,
        config,
        train,
        val,
    };
    stage.run(model, trace, &mut rng, |m, batch, rng| {
        let tape = Tape::new();
        let fwd = m.forward(&tape, &batch.x)?;
        let noise: Vec<T> = (0..batch.len())
            .map(|_| T::lit(StandardNormal.sample(rng)))
            .collect();
        let samples = sample_predictions(fwd.mu, fwd.log_var, &noise, true)?;
        let loss = mmd2_biased(&batch.y, samples, &mixture)?;
        tape.backward(loss)?;
        Ok((loss.item().expect("scalar loss"), gradients(&tape, &fwd.params)))
    })
}

/// Copies every parameter except the log-variance column of the output
/// layer (and its bias) back from `frozen`.
fn restore_outside_variance_head<T: Scalar>(model: &mut HnnModel<T>, frozen: &HnnModel<T>) {
    let params = model.params_mut();
    for (p, f) in params.iter_mut().zip(frozen.params()).take(4) {
        p.data_mut().copy_from_slice(f.data());
    }
    // w3 is hidden x 2, row-major; column 0 is the mean head.
    for (k, v) in params[4].data_mut().iter_mut().enumerate() {
        if k % 2 == 0 {
            *v = frozen.params()[4].data()[k];
        }
    }
    params[5].data_mut()[0] = frozen.params()[5].data()[0];
}

/// Stage 1 then stage 2, each run once. `trace` receives every epoch record
/// as it is produced, so a divergence error leaves the partial trace behind.
pub fn train_two_stage_into<T: Scalar>(
    model: HnnModel<T>,
    train: &Samples<T>,
    val: &Samples<T>,
    config: &TrainConfig,
    trace: &mut TrainTrace,
) -> Result<HnnModel<T>> {
    let hnn = train_stage1(model, train, val, config, trace)?;
    train_stage2(hnn, train, val, config, trace)
}

pub fn train_two_stage<T: Scalar>(
    model: HnnModel<T>,
    train: &Samples<T>,
    val: &Samples<T>,
    config: &TrainConfig,
) -> Result<(HnnModel<T>, TrainTrace)> {
    let mut trace = TrainTrace::default();
    let model = train_two_stage_into(model, train, val, config, &mut trace)?;
    Ok((model, trace))
}
