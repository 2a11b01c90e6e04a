//! Calibrated heteroscedastic regression by kernel MMD fine-tuning.
//!
//! The numerical core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which the experiment and CLI layers use.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod kernels;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod recalibration;
pub mod scalar;
pub mod train;
pub mod verification;

pub use error::{Error, Result};
pub use experiment::{ExperimentConfig, Method};
pub use metrics::{CalibrationReport, ConfidenceGrid};
pub use recalibration::IsotonicRecalibrator;
pub use scalar::Scalar;
pub use train::{TrainConfig, TrainTrace};

pub type Tensor = autodiff::Tensor<f64>;
pub type Hnn = model::HnnModel<f64>;
pub type Prediction = model::GaussianPrediction<f64>;
pub type Mixture = kernels::KernelMixture<f64>;
pub type Samples = data::Samples<f64>;
pub type Splits = data::Splits<f64>;
