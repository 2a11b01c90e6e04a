//! Gaussian quantiles, prediction intervals, coverage/sharpness/accuracy
//! metrics, and reliability-diagram data.

mod accuracy;
mod calibration;
pub mod normal;
mod report;

pub use accuracy::{accuracy_lenient, accuracy_metrics, Accuracy};
pub use calibration::{
    central_interval, central_tails, coverage_with, ecpe, empirical_coverage, epiw_mpiw,
    gaussian_quantile, mcpe, one_sided_coverage, one_sided_coverage_with, reliability_rows,
    ConfidenceGrid, PredictionInterval, ReliabilityRow,
};
pub use report::{
    interval_rows, reliability_svg, write_intervals_csv, write_reliability_csv, CalibrationReport,
    IntervalRow, DEFAULT_INTERVAL_LEVEL,
};
