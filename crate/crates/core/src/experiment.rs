//! Reproducible experiments: configuration, per-seed run directories,
//! evaluation reports, multi-seed aggregation and method comparison.
//!
//! Run directory layout (`<out_dir>/<method>/seed-<k>/`):
//!
//! | file | content |
//! |------|---------|
//! | `config.toml` | resolved configuration for this seed |
//! | `run.json` | method, seed, library version |
//! | `checkpoint.json` | model weights |
//! | `scalers.json` | min–max scalers fitted on the training split |
//! | `trace.csv` | per-epoch training trace |
//! | `isr.csv` | recalibration breakpoints (`hnn+isr` only) |
//! | `report.json`, `reliability.csv`, `reliability.svg`, `intervals.csv` | written by evaluation |

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{
    load_csv, make_windows, split, synth_heteroscedastic, windowed_splits, CsvOptions, Dataset, Scalers,
    SplitMode, SplitSpec, Splits, SynthSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{
    interval_rows, reliability_svg, write_intervals_csv, write_reliability_csv, CalibrationReport, ConfidenceGrid,
    DEFAULT_INTERVAL_LEVEL,
};
use crate::model::{GaussianPrediction, HnnModel};
use crate::recalibration::{apply_recalibration, IsotonicRecalibrator};
use crate::train::{train_stage1, train_stage2, TrainConfig, TrainTrace};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const SEED_ENV: &str = "MMDCAL_SEED";
pub const OUT_DIR_ENV: &str = "MMDCAL_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "hnn")]
    Hnn,
    #[serde(rename = "hnn+isr")]
    HnnIsr,
    #[serde(rename = "hnn+mmd")]
    HnnMmd,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Hnn => "hnn",
            Method::HnnIsr => "hnn+isr",
            Method::HnnMmd => "hnn+mmd",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hnn" => Ok(Method::Hnn),
            "hnn+isr" => Ok(Method::HnnIsr),
            "hnn+mmd" => Ok(Method::HnnMmd),
            other => Err(Error::Config(format!("unknown method `{other}` (expected hnn, hnn+isr or hnn+mmd)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synth {
        n: usize,
        #[serde(default = "one")]
        dim: usize,
        #[serde(default = "unit")]
        noise_scale: f64,
    },
    Csv {
        path: PathBuf,
        target: String,
        #[serde(default)]
        features: Vec<String>,
        #[serde(default)]
        interpolate: bool,
        /// Frame the file as a series: lagged windows of this many steps.
        #[serde(default)]
        window: Option<usize>,
        #[serde(default = "one")]
        horizon: usize,
    },
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub mode: SplitMode,
    pub fractions: [f64; 3],
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            mode: SplitMode::Random,
            fractions: [0.8, 0.1, 0.1],
        }
    }
}

/// Experiment description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
    #[serde(default = "default_hidden")]
    pub hidden_dim: usize,
    #[serde(default)]
    pub grid: ConfidenceGrid,
    #[serde(default = "default_level")]
    pub interval_level: f64,
    /// Multiplies the stage-1 predictive σ before calibration; values below
    /// one simulate an overconfident base model.
    #[serde(default)]
    pub stage1_sigma_scale: Option<f64>,
    pub data: DataSource,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_hidden() -> usize {
    64
}

fn default_level() -> f64 {
    DEFAULT_INTERVAL_LEVEL
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and applies `MMDCAL_SEED` / `MMDCAL_OUT_DIR`.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let mut config = Self::from_toml(&fs::read_to_string(path)?)?;
        config.apply_overrides(std::env::var(SEED_ENV).ok(), std::env::var(OUT_DIR_ENV).ok())?;
        config.validate()?;
        Ok(config)
    }

    pub fn apply_overrides(&mut self, seed: Option<String>, out_dir: Option<String>) -> Result<()> {
        if let Some(s) = seed {
            let seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV} must be an unsigned integer, got `{s}`")))?;
            self.seeds = vec![seed];
        }
        if let Some(dir) = out_dir {
            self.out_dir = PathBuf::from(dir);
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::Config("hidden_dim must be positive".into()));
        }
        if !(self.interval_level > 0.0 && self.interval_level < 1.0) {
            return Err(Error::Config(format!("interval_level must lie in (0, 1), got {}", self.interval_level)));
        }
        if let Some(f) = self.stage1_sigma_scale {
            if !(f > 0.0 && f.is_finite()) {
                return Err(Error::Config(format!("stage1_sigma_scale must be positive, got {f}")));
            }
        }
        if let DataSource::Csv { path, .. } = &self.data {
            if !path.exists() {
                return Err(Error::FileNotFound(path.clone()));
            }
        }
        SplitSpec {
            mode: self.split.mode,
            fractions: self.split.fractions,
            seed: 0,
        }
        .validate()?;
        self.train.validate()
    }

    /// Copy narrowed to one seed, as stored in a run directory.
    pub fn for_seed(&self, seed: u64) -> Self {
        ExperimentConfig {
            seeds: vec![seed],
            train: TrainConfig {
                seed,
                ..self.train.clone()
            },
            ..self.clone()
        }
    }

    pub fn method_dir(&self) -> PathBuf {
        self.out_dir.join(self.method.as_str())
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.method_dir().join(format!("seed-{seed}"))
    }
}

/// Loads the configured data and splits it for `seed`. Synthetic data is
/// regenerated from the seed, so each trial sees a fresh sample.
pub fn prepare_splits(config: &ExperimentConfig, seed: u64) -> Result<Splits<f64>> {
    let fractions = config.split.fractions;
    match &config.data {
        DataSource::Synth { n, dim, noise_scale } => {
            let data = synth_heteroscedastic(&SynthSpec {
                n: *n,
                seed,
                dim: *dim,
                noise_scale: *noise_scale,
            })?;
            split(&data, &spec(config, seed))
        }
        DataSource::Csv {
            path,
            target,
            features,
            interpolate,
            window,
            horizon,
        } => {
            let options = CsvOptions {
                features: features.clone(),
                interpolate: *interpolate,
            };
            let data = load_csv(path, target, &options)?;
            match window {
                Some(w) if config.split.mode == SplitMode::Chronological => {
                    windowed_splits(&data, *w, *horizon, fractions)
                }
                Some(w) => split(&make_windows(&data, *w, *horizon)?, &spec(config, seed)),
                None => split(&data, &spec(config, seed)),
            }
        }
    }
}

fn spec(config: &ExperimentConfig, seed: u64) -> SplitSpec {
    SplitSpec {
        mode: config.split.mode,
        fractions: config.split.fractions,
        seed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub method: Method,
    pub seed: u64,
    pub version: String,
}

/// Trained artefacts of one seed.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: HnnModel<f64>,
    pub recalibrator: Option<IsotonicRecalibrator>,
    pub trace: TrainTrace,
    pub scalers: Scalers,
}

/// Trains one seed in memory, filling `trace` as epochs complete.
pub fn train_run(config: &ExperimentConfig, seed: u64, trace: &mut TrainTrace) -> Result<TrainedRun> {
    let config = config.for_seed(seed);
    let splits = prepare_splits(&config, seed)?;
    let init = HnnModel::init(splits.train.n_features(), config.hidden_dim, seed)?;
    let mut model = train_stage1(init, &splits.train, &splits.val, &config.train, trace)?;
    if let Some(f) = config.stage1_sigma_scale {
        model.scale_sigma(f);
    }
    let mut recalibrator = None;
    match config.method {
        Method::Hnn => {}
        Method::HnnMmd => model = train_stage2(model, &splits.train, &splits.val, &config.train, trace)?,
        Method::HnnIsr => {
            let preds = model.predict_distribution(&splits.val.x)?;
            recalibrator = Some(IsotonicRecalibrator::fit(&preds, &splits.val.y)?);
        }
    }
    Ok(TrainedRun {
        model,
        recalibrator,
        trace: trace.clone(),
        scalers: splits.scalers,
    })
}

/// Trains one seed and writes its run directory. On failure the partial
/// trace is still written before the error is returned.
pub fn cmd_train_seed(config: &ExperimentConfig, seed: u64) -> Result<PathBuf> {
    let resolved = config.for_seed(seed);
    let dir = resolved.run_dir(seed);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), resolved.to_toml()?)?;
    let info = RunInfo {
        method: config.method,
        seed,
        version: VERSION.to_string(),
    };
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&info)?)?;
    let mut trace = TrainTrace::default();
    let run = match train_run(&resolved, seed, &mut trace) {
        Ok(run) => run,
        Err(e) => {
            trace.write_csv(&dir.join("trace.csv"))?;
            log::error!("seed {seed} failed; partial trace in {}", dir.display());
            return Err(e);
        }
    };
    run.trace.write_csv(&dir.join("trace.csv"))?;
    run.model.save(&dir.join("checkpoint.json"))?;
    run.scalers.write_json(&dir.join("scalers.json"))?;
    if let Some(r) = &run.recalibrator {
        r.write_csv(&dir.join("isr.csv"))?;
    }
    Ok(dir)
}

/// Trains every configured seed; returns the run directories.
pub fn cmd_train(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    config.validate()?;
    config.seeds.iter().map(|&s| cmd_train_seed(config, s)).collect()
}

/// Loads a run directory's resolved config and seed.
pub fn load_run(run_dir: &Path) -> Result<(ExperimentConfig, RunInfo)> {
    let config_path = run_dir.join("config.toml");
    if !config_path.exists() {
        return Err(Error::FileNotFound(config_path));
    }
    let config = ExperimentConfig::from_toml(&fs::read_to_string(&config_path)?)?;
    let info: RunInfo = serde_json::from_str(&fs::read_to_string(run_dir.join("run.json"))?)?;
    Ok((config, info))
}

/// Scores predictions in target units. Quantiles of recalibrated runs go
/// through the recalibrator, then the (increasing) target scaler.
pub fn score<'a>(
    method: Method,
    preds: &'a [GaussianPrediction<f64>],
    recalibrator: Option<&'a IsotonicRecalibrator>,
    y_raw: &[f64],
    scalers: &Scalers,
    grid: &ConfidenceGrid,
    interval_level: f64,
) -> Result<(CalibrationReport, QuantileFn<'a>)> {
    let t = scalers.target;
    let mu: Vec<f64> = preds.iter().map(|p| t.descale(p.mu)).collect();
    let quantile: QuantileFn<'a> = match recalibrator {
        Some(r) => Box::new(move |i, p| Ok(t.descale(apply_recalibration(r, &preds[i], p)?))),
        None => Box::new(move |i, p| Ok(t.descale(preds[i].quantile(p)?))),
    };
    let report = CalibrationReport::from_quantiles(method.as_str(), y_raw, &mu, grid, interval_level, &quantile)?;
    Ok((report, quantile))
}

pub type QuantileFn<'a> = Box<dyn Fn(usize, f64) -> Result<f64> + 'a>;

/// Evaluates a run on its test split and writes the report files.
/// With `all_levels`, also writes `intervals_<level>.csv` for every grid level.
pub fn cmd_evaluate(run_dir: &Path, all_levels: bool) -> Result<CalibrationReport> {
    let (config, info) = load_run(run_dir)?;
    let model = HnnModel::<f64>::load(&run_dir.join("checkpoint.json"))?;
    let recalibrator = match info.method {
        Method::HnnIsr => {
            let p = run_dir.join("isr.csv");
            if !p.exists() {
                return Err(Error::MissingCheckpoint(p));
            }
            Some(IsotonicRecalibrator::read_csv(&p)?)
        }
        _ => None,
    };
    let scalers = Scalers::read_json(&run_dir.join("scalers.json"))?;
    let splits = prepare_splits(&config, info.seed)?;
    let preds = model.predict_distribution(&splits.test.x)?;
    let (report, quantile) = score(
        info.method,
        &preds,
        recalibrator.as_ref(),
        &splits.test.y_raw,
        &scalers,
        &config.grid,
        config.interval_level,
    )?;
    report.write_json(&run_dir.join("report.json"))?;
    let reliability = report.reliability();
    write_reliability_csv(&run_dir.join("reliability.csv"), &reliability)?;
    let title = format!("{} seed {}", info.method, info.seed);
    fs::write(run_dir.join("reliability.svg"), reliability_svg(&reliability, &title))?;
    let mu: Vec<f64> = preds.iter().map(|p| scalers.target.descale(p.mu)).collect();
    let rows = interval_rows(&splits.test.y_raw, &mu, config.interval_level, &quantile)?;
    write_intervals_csv(&run_dir.join("intervals.csv"), &rows)?;
    if all_levels {
        for &level in config.grid.levels() {
            let rows = interval_rows(&splits.test.y_raw, &mu, level, &quantile)?;
            write_intervals_csv(&run_dir.join(format!("intervals_{level:.2}.csv")), &rows)?;
        }
    }
    Ok(report)
}

/// Mean and standard error of one metric across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    pub mean: Option<f64>,
    pub std_err: Option<f64>,
    pub n: usize,
}

/// Per-metric mean ± standard error (sample std / √n). Undefined values are
/// skipped; a metric undefined in every run is reported as null.
pub fn aggregate(reports: &[CalibrationReport]) -> Result<Vec<MetricSummary>> {
    let first = reports.first().ok_or(Error::EmptySample("aggregate"))?;
    check_grids(reports)?;
    Ok(first
        .metrics()
        .iter()
        .enumerate()
        .map(|(k, (name, _))| {
            let values: Vec<f64> = reports.iter().filter_map(|r| r.metrics()[k].1).collect();
            let n = values.len();
            let mean = (n > 0).then(|| values.iter().sum::<f64>() / n as f64);
            let std_err = mean.filter(|_| n > 1).map(|m| {
                let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            });
            MetricSummary {
                metric: name.to_string(),
                mean,
                std_err,
                n,
            }
        })
        .collect())
}

fn check_grids(reports: &[CalibrationReport]) -> Result<()> {
    let levels = &reports[0].levels;
    if reports.iter().any(|r| &r.levels != levels) {
        return Err(Error::IncompatibleGrids);
    }
    Ok(())
}

pub fn write_summary_csv(path: &Path, summary: &[MetricSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in summary {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

/// Evaluates every seed of a trained method directory and writes
/// `summary.csv` beside the seed directories.
pub fn evaluate_all(config: &ExperimentConfig, all_levels: bool) -> Result<Vec<MetricSummary>> {
    let reports = config
        .seeds
        .iter()
        .map(|&s| cmd_evaluate(&config.run_dir(s), all_levels))
        .collect::<Result<Vec<_>>>()?;
    let summary = aggregate(&reports)?;
    write_summary_csv(&config.method_dir().join("summary.csv"), &summary)?;
    Ok(summary)
}

/// Methods × metrics table with the best value per metric marked.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonTable {
    pub labels: Vec<String>,
    pub metrics: Vec<&'static str>,
    pub values: Vec<Vec<Option<f64>>>,
    /// Row index of the best value per metric, if any row has one.
    pub best: Vec<Option<usize>>,
}

fn higher_is_better(metric: &str) -> bool {
    metric == "r2"
}

/// A run directory contributes its `report.json`; a method directory with
/// `seed-*` children contributes the mean of their reports.
fn load_reports(dir: &Path) -> Result<Vec<CalibrationReport>> {
    let single = dir.join("report.json");
    if single.exists() {
        return Ok(vec![CalibrationReport::read_json(&single)?]);
    }
    if !dir.is_dir() {
        return Err(Error::FileNotFound(dir.to_path_buf()));
    }
    let mut seeds: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("report.json").exists())
        .collect();
    seeds.sort();
    if seeds.is_empty() {
        return Err(Error::FileNotFound(single));
    }
    seeds.iter().map(|p| CalibrationReport::read_json(&p.join("report.json"))).collect()
}

pub fn cmd_compare(dirs: &[PathBuf]) -> Result<ComparisonTable> {
    if dirs.len() < 2 {
        return Err(Error::Config("compare needs at least two runs".into()));
    }
    let groups = dirs.iter().map(|d| load_reports(d)).collect::<Result<Vec<_>>>()?;
    let all: Vec<CalibrationReport> = groups.iter().flatten().cloned().collect();
    check_grids(&all)?;
    let metrics: Vec<&'static str> = all[0].metrics().iter().map(|(n, _)| *n).collect();
    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (dir, reports) in dirs.iter().zip(&groups) {
        let name = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        labels.push(format!("{} ({name})", reports[0].method));
        values.push(aggregate(reports)?.into_iter().map(|s| s.mean).collect());
    }
    let best = (0..metrics.len())
        .map(|k| {
            let flip = if higher_is_better(metrics[k]) { -1.0 } else { 1.0 };
            values
                .iter()
                .enumerate()
                .filter_map(|(i, row): (usize, &Vec<Option<f64>>)| row[k].map(|v| (i, flip * v)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
        })
        .collect();
    Ok(ComparisonTable {
        labels,
        metrics,
        values,
        best,
    })
}

impl ComparisonTable {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["run".to_string()];
        header.extend(self.metrics.iter().map(|m| m.to_string()));
        w.write_record(&header)?;
        for (label, row) in self.labels.iter().zip(&self.values) {
            let mut rec = vec![label.clone()];
            rec.extend(row.iter().map(|v| v.map_or("null".to_string(), |v| v.to_string())));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for ComparisonTable {
    /// Fixed-width text; `*` marks the best value per column.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let width = self.labels.iter().map(String::len).max().unwrap_or(3).max(3);
        write!(f, "{:width$}", "run")?;
        for m in &self.metrics {
            write!(f, " {m:>15}")?;
        }
        writeln!(f)?;
        for (i, (label, row)) in self.labels.iter().zip(&self.values).enumerate() {
            write!(f, "{label:width$}")?;
            for (k, v) in row.iter().enumerate() {
                let mark = if self.best[k] == Some(i) { "*" } else { " " };
                match v {
                    Some(v) => write!(f, " {:>14.6}{mark}", v)?,
                    None => write!(f, " {:>14}{mark}", "null")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Writes a synthetic dataset as CSV.
pub fn cmd_synth(spec: &SynthSpec, path: &Path) -> Result<Dataset> {
    let data = synth_heteroscedastic(spec)?;
    data.write_csv(path)?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(dir: &Path, method: Method) -> ExperimentConfig {
        ExperimentConfig {
            method,
            out_dir: dir.to_path_buf(),
            seeds: vec![1, 2],
            hidden_dim: 8,
            grid: ConfidenceGrid::default(),
            interval_level: 0.95,
            stage1_sigma_scale: None,
            data: DataSource::Synth {
                n: 300,
                dim: 1,
                noise_scale: 1.0,
            },
            split: SplitConfig::default(),
            train: TrainConfig {
                lr: 1e-2,
                stage1_epochs: 3,
                stage2_epochs: 2,
                batch_size: 64,
                ..Default::default()
            },
        }
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), Method::HnnIsr);
        assert_eq!(ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap(), c);

        let minimal = r#"
            method = "hnn+mmd"
            out_dir = "runs"
            seeds = [0]
            [data]
            source = "synth"
            n = 500
        "#;
        let m = ExperimentConfig::from_toml(minimal).unwrap();
        assert_eq!(m.hidden_dim, 64);
        assert_eq!(m.train, TrainConfig::default());
        assert_eq!(m.grid, ConfidenceGrid::default());
        assert!(m.validate().is_ok());
    }

    #[test]
    fn config_errors() {
        assert!(ExperimentConfig::from_toml("method = \"gp\"").is_err());
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), Method::Hnn);
        c.seeds.clear();
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let mut c = config(dir.path(), Method::Hnn);
        c.data = DataSource::Csv {
            path: dir.path().join("absent.csv"),
            target: "y".into(),
            features: vec![],
            interpolate: false,
            window: None,
            horizon: 1,
        };
        assert!(matches!(c.validate(), Err(Error::FileNotFound(_))));
        assert!("hnn+gp".parse::<Method>().is_err());
        assert_eq!("hnn+isr".parse::<Method>().unwrap(), Method::HnnIsr);
    }

    #[test]
    fn env_style_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), Method::Hnn);
        c.apply_overrides(Some("9".into()), Some("/tmp/elsewhere".into())).unwrap();
        assert_eq!(c.seeds, vec![9]);
        assert_eq!(c.out_dir, PathBuf::from("/tmp/elsewhere"));
        assert!(c.apply_overrides(Some("x".into()), None).is_err());
    }

    #[test]
    fn train_evaluate_and_aggregate() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), Method::HnnMmd);
        let runs = cmd_train(&c).unwrap();
        assert_eq!(runs.len(), 2);
        for r in &runs {
            for f in ["config.toml", "run.json", "checkpoint.json", "scalers.json", "trace.csv"] {
                assert!(r.join(f).exists(), "{f}");
            }
        }
        let summary = evaluate_all(&c, true).unwrap();
        assert!(c.method_dir().join("summary.csv").exists());
        let names: Vec<&str> = summary.iter().map(|s| s.metric.as_str()).collect();
        for m in ["ecpe", "mcpe", "epiw", "mpiw", "rmse", "r2", "rse", "smape"] {
            assert!(names.contains(&m), "{m}");
        }
        assert!(summary.iter().all(|s| s.n == 2 && s.std_err.is_some()));
        assert!(runs[0].join("intervals_0.95.csv").exists());
        assert!(runs[0].join("reliability.svg").exists());

        let again = cmd_evaluate(&runs[0], false).unwrap();
        assert_eq!(again, CalibrationReport::read_json(&runs[0].join("report.json")).unwrap());
    }

    #[test]
    fn rerun_gives_identical_checkpoint() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = cmd_train_seed(&config(a.path(), Method::HnnMmd), 3).unwrap();
        let rb = cmd_train_seed(&config(b.path(), Method::HnnMmd), 3).unwrap();
        let read = |p: &Path| fs::read(p.join("checkpoint.json")).unwrap();
        assert_eq!(read(&ra), read(&rb));
    }

    #[test]
    fn hnn_equals_mmd_with_no_stage2_epochs() {
        let dir = tempfile::tempdir().unwrap();
        let hnn = config(dir.path(), Method::Hnn);
        let mut mmd = config(dir.path(), Method::HnnMmd);
        mmd.train.stage2_epochs = 0;
        let a = cmd_train_seed(&hnn, 1).unwrap();
        let b = cmd_train_seed(&mmd, 1).unwrap();
        let ma = HnnModel::<f64>::load(&a.join("checkpoint.json")).unwrap();
        let mb = HnnModel::<f64>::load(&b.join("checkpoint.json")).unwrap();
        assert_eq!(ma, mb);
    }

    #[test]
    fn isr_run_and_missing_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let c = config(dir.path(), Method::HnnIsr);
        let run = cmd_train_seed(&c, 1).unwrap();
        assert!(run.join("isr.csv").exists());
        let r = cmd_evaluate(&run, false).unwrap();
        assert_eq!(r.method, "hnn+isr");

        fs::remove_file(run.join("checkpoint.json")).unwrap();
        assert!(matches!(cmd_evaluate(&run, false), Err(Error::MissingCheckpoint(_))));
    }

    #[test]
    fn compare_runs() {
        let dir = tempfile::tempdir().unwrap();
        let mut runs = Vec::new();
        for m in [Method::Hnn, Method::HnnMmd] {
            let mut c = config(dir.path(), m);
            c.seeds = vec![1];
            let r = cmd_train_seed(&c, 1).unwrap();
            cmd_evaluate(&r, false).unwrap();
            runs.push(r);
        }
        let self_cmp = cmd_compare(&[runs[0].clone(), runs[0].clone()]).unwrap();
        assert_eq!(self_cmp.values[0], self_cmp.values[1]);

        let table = cmd_compare(&runs).unwrap();
        assert_eq!(table.labels.len(), 2);
        assert!(table.best.iter().all(Option::is_some));
        let text = table.to_string();
        assert!(text.contains("hnn+mmd") && text.contains('*'));
        let csv_path = dir.path().join("cmp.csv");
        table.write_csv(&csv_path).unwrap();
        assert!(fs::read_to_string(&csv_path).unwrap().starts_with("run,ecpe,"));

        // Method directory aggregates its seeds.
        let by_method = cmd_compare(&[runs[0].parent().unwrap().to_path_buf(), runs[1].clone()]).unwrap();
        assert_eq!(by_method.values[0], table.values[0]);

        assert!(cmd_compare(&runs[..1]).is_err());
    }

    #[test]
    fn compare_rejects_mixed_grids_and_shows_nulls() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), Method::Hnn);
        c.seeds = vec![1];
        let r = cmd_train_seed(&c, 1).unwrap();
        let report = cmd_evaluate(&r, false).unwrap();

        let other = dir.path().join("other");
        fs::create_dir_all(&other).unwrap();
        let mut coarse = report.clone();
        coarse.levels = vec![0.5];
        coarse.coverage = vec![0.5];
        coarse.coverage_one_sided = vec![0.5];
        coarse.write_json(&other.join("report.json")).unwrap();
        assert!(matches!(cmd_compare(&[r.clone(), other.clone()]), Err(Error::IncompatibleGrids)));

        let mut undefined = report.clone();
        undefined.r2 = None;
        undefined.write_json(&other.join("report.json")).unwrap();
        let table = cmd_compare(&[r, other.clone()]).unwrap();
        let k = table.metrics.iter().position(|m| *m == "r2").unwrap();
        assert_eq!(table.values[1][k], None);
        let path = dir.path().join("t.csv");
        table.write_csv(&path).unwrap();
        assert!(fs::read_to_string(&path).unwrap().contains("null"));
    }

    #[test]
    fn divergence_leaves_partial_trace() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = config(dir.path(), Method::HnnMmd);
        c.train.lr = 1e6;
        c.train.weight_decay = 0.0;
        let err = cmd_train_seed(&c, 1).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
        assert!(c.run_dir(1).join("trace.csv").exists());
    }

    #[test]
    fn synth_command_writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let data = cmd_synth(&SynthSpec::new(150, 2), &p).unwrap();
        let back = load_csv(&p, "y", &CsvOptions::default()).unwrap();
        assert_eq!(back.targets(), data.targets());
    }

    #[test]
    fn windowed_csv_source() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("series.csv");
        let mut text = String::from("t,load\n");
        for i in 0..200 {
            text += &format!("{i},{}\n", (i as f64 / 7.0).sin() + i as f64 * 0.01);
        }
        fs::write(&p, text).unwrap();
        let mut c = config(dir.path(), Method::Hnn);
        c.data = DataSource::Csv {
            path: p,
            target: "load".into(),
            features: vec!["t".into()],
            interpolate: true,
            window: Some(5),
            horizon: 1,
        };
        c.split = SplitConfig {
            mode: SplitMode::Chronological,
            fractions: [0.7, 0.1, 0.2],
        };
        let s = prepare_splits(&c, 0).unwrap();
        assert_eq!(s.train.n_features(), 10);
        assert_eq!(s.train.len(), 140 - 5);
    }
}
