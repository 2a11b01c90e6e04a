//! Dataset ingestion, min–max scaling, splitting, sliding windows and the
//! synthetic heteroscedastic generator.
//!
//! All randomness uses `ChaCha8Rng::seed_from_u64(seed)`, which is stable
//! across platforms and releases of `rand_chacha`.

use std::collections::HashSet;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Raw (unscaled) regression data, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub target_name: String,
    n_features: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    /// Noise standard deviation per row, known only for synthetic data.
    pub true_sigma: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(feature_names: Vec<String>, target_name: String, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let d = feature_names.len();
        if d == 0 {
            return Err(Error::Config("dataset needs at least one feature".into()));
        }
        if x.len() != d * y.len() {
            return Err(Error::length("feature values", d * y.len(), x.len()));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset values".into()));
        }
        Ok(Dataset {
            feature_names,
            target_name,
            n_features: d,
            x,
            y,
            true_sigma: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn targets(&self) -> &[f64] {
        &self.y
    }

    pub fn features(&self) -> &[f64] {
        &self.x
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.iter().skip(j).step_by(self.n_features).copied().collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut x = Vec::with_capacity(indices.len() * self.n_features);
        for &i in indices {
            x.extend_from_slice(self.row(i));
        }
        Dataset {
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
            n_features: self.n_features,
            x,
            y: indices.iter().map(|&i| self.y[i]).collect(),
            true_sigma: self
                .true_sigma
                .as_ref()
                .map(|s| indices.iter().map(|&i| s[i]).collect()),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.feature_names.clone();
        header.push(self.target_name.clone());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.y[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Affine map of `[min, max]` onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMaxScaler {
    pub min: f64,
    pub max: f64,
}

impl MinMaxScaler {
    pub fn fit(values: &[f64]) -> Option<Self> {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (max > min).then_some(MinMaxScaler { min, max })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn scale(&self, v: f64) -> f64 {
        (v - self.min) / self.range()
    }

    pub fn descale(&self, v: f64) -> f64 {
        v * self.range() + self.min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scalers {
    pub features: Vec<MinMaxScaler>,
    pub target: MinMaxScaler,
}

impl Scalers {
    /// Fits on the given (training) rows. A feature constant on these rows
    /// gets a unit-range scaler so it maps to 0 rather than dividing by zero.
    pub fn fit(train: &Dataset) -> Result<Self> {
        let features = (0..train.n_features())
            .map(|j| {
                let col = train.column(j);
                MinMaxScaler::fit(&col).unwrap_or_else(|| {
                    warn!(
                        "feature `{}` is constant on the training split; using unit range",
                        train.feature_names[j]
                    );
                    MinMaxScaler {
                        min: col.first().copied().unwrap_or(0.0),
                        max: col.first().copied().unwrap_or(0.0) + 1.0,
                    }
                })
            })
            .collect();
        let target = MinMaxScaler::fit(train.targets()).ok_or_else(|| {
            Error::Config(format!("target `{}` is constant on the training split", train.target_name))
        })?;
        Ok(Scalers { features, target })
    }

    /// Scaled feature matrix and targets. Values outside the fitted range are
    /// passed through unclipped.
    pub fn transform<T: Scalar>(&self, data: &Dataset) -> Result<Samples<T>> {
        if data.n_features() != self.features.len() {
            return Err(Error::length("features", self.features.len(), data.n_features()));
        }
        let d = data.n_features();
        let x = data
            .features()
            .iter()
            .enumerate()
            .map(|(k, &v)| T::lit(self.features[k % d].scale(v)))
            .collect();
        Ok(Samples {
            x: Tensor::matrix(data.len(), d, x)?,
            y: data.targets().iter().map(|&v| T::lit(self.target.scale(v))).collect(),
            y_raw: data.targets().to_vec(),
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Model-ready view of a split: scaled inputs and targets plus raw targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples<T> {
    pub x: Tensor<T>,
    pub y: Vec<T>,
    pub y_raw: Vec<f64>,
}

impl<T: Scalar> Samples<T> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x.dims2().map_or(0, |(_, c)| c)
    }

    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Ok(Samples {
            x: self.x.select_rows(indices)?,
            y: indices.iter().map(|&i| self.y[i]).collect(),
            y_raw: indices.iter().map(|&i| self.y_raw[i]).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitMode {
    Random,
    Chronological,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub mode: SplitMode,
    /// `(train, val, test)`.
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            mode: SplitMode::Random,
            fractions: [0.8, 0.1, 0.1],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.fractions.iter().sum();
        if self.fractions.iter().any(|&f| !(f > 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::FractionInvalid(self.fractions.to_vec()));
        }
        Ok(())
    }

    /// Row counts per part; test takes the rounding remainder.
    pub fn sizes(&self, n: usize) -> Result<[usize; 3]> {
        self.validate()?;
        let train = (n as f64 * self.fractions[0]).round() as usize;
        let val = (n as f64 * self.fractions[1]).round() as usize;
        if train == 0 || val == 0 || train + val >= n {
            return Err(Error::EmptySplit("dataset too small for the requested fractions"));
        }
        Ok([train, val, n - train - val])
    }

    /// Row indices of each part.
    pub fn indices(&self, n: usize) -> Result<[Vec<usize>; 3]> {
        let [a, b, _] = self.sizes(n)?;
        let mut order: Vec<usize> = (0..n).collect();
        if self.mode == SplitMode::Random {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        }
        let test = order.split_off(a + b);
        let val = order.split_off(a);
        Ok([order, val, test])
    }
}

/// Train/validation/test parts sharing scalers fitted on train.
#[derive(Debug, Clone)]
pub struct Splits<T> {
    pub train: Samples<T>,
    pub val: Samples<T>,
    pub test: Samples<T>,
    pub scalers: Scalers,
    /// Original row indices of each part.
    pub indices: [Vec<usize>; 3],
}

pub fn split<T: Scalar>(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits<T>> {
    let indices = spec.indices(dataset.len())?;
    let parts = indices.clone().map(|idx| dataset.subset(&idx));
    let scalers = Scalers::fit(&parts[0])?;
    Ok(Splits {
        train: scalers.transform(&parts[0])?,
        val: scalers.transform(&parts[1])?,
        test: scalers.transform(&parts[2])?,
        scalers,
        indices,
    })
}

/// Options for [`load_csv`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    /// Feature columns; empty means every column except the target.
    #[serde(default)]
    pub features: Vec<String>,
    /// Fill missing cells by linear interpolation along the row order
    /// instead of rejecting the row.
    #[serde(default)]
    pub interpolate: bool,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim().to_ascii_lowercase().as_str(), "" | "na" | "nan" | "null")
}

/// Reads a headered numeric file separated by commas, or by semicolons
/// when the header has no commas (the UCI wine files).
///
/// Rows with missing cells are dropped unless `interpolate` is set. Feature
/// columns that are constant over the whole file are dropped with a warning.
pub fn load_csv(path: &Path, target: &str, options: &CsvOptions) -> Result<Dataset> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let first_line = std::io::BufRead::lines(std::io::BufReader::new(std::fs::File::open(path)?))
        .next()
        .transpose()?
        .unwrap_or_default();
    let delimiter = if !first_line.contains(',') && first_line.contains(';') { b';' } else { b',' };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .delimiter(delimiter)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::ColumnMissing(name.to_string()))
    };
    let target_idx = find(target)?;
    let feature_names: Vec<String> = if options.features.is_empty() {
        header.iter().filter(|h| *h != target).cloned().collect()
    } else {
        options.features.clone()
    };
    let feature_idx = feature_names.iter().map(|f| find(f)).collect::<Result<Vec<_>>>()?;
    let mut wanted = feature_idx.clone();
    wanted.push(target_idx);

    // One Option per selected cell; rows are kept in file order.
    let mut rows: Vec<Vec<Option<f64>>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = wanted
            .iter()
            .map(|&c| {
                let cell = record.get(c).unwrap_or("");
                if is_missing(cell) {
                    Ok(None)
                } else {
                    cell.trim().parse::<f64>().map(Some).map_err(|_| Error::ParseError {
                        row: r + 1,
                        column: header[c].clone(),
                        value: cell.to_string(),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }

    let width = wanted.len();
    let mut columns: Vec<Vec<f64>> = if options.interpolate {
        (0..width)
            .map(|c| {
                let col: Vec<Option<f64>> = rows.iter().map(|r| r[c]).collect();
                interpolate_missing(&col).ok_or_else(|| {
                    Error::Config(format!("column `{}` has no values", header[wanted[c]]))
                })
            })
            .collect::<Result<_>>()?
    } else {
        let complete: Vec<&Vec<Option<f64>>> = rows.iter().filter(|r| r.iter().all(Option::is_some)).collect();
        let dropped = rows.len() - complete.len();
        if dropped > 0 {
            warn!("dropped {dropped} rows with missing values from {}", path.display());
        }
        (0..width)
            .map(|c| complete.iter().map(|r| r[c].expect("complete row")).collect())
            .collect()
    };

    let y = columns.pop().expect("target column");
    let mut names = Vec::new();
    let mut kept = Vec::new();
    for (name, col) in feature_names.into_iter().zip(columns) {
        if MinMaxScaler::fit(&col).is_none() {
            warn!("dropping constant column `{name}`");
            continue;
        }
        names.push(name);
        kept.push(col);
    }
    if kept.is_empty() {
        return Err(Error::Config("no non-constant feature columns".into()));
    }
    let n = y.len();
    let mut x = Vec::with_capacity(n * kept.len());
    for i in 0..n {
        x.extend(kept.iter().map(|c| c[i]));
    }
    Dataset::new(names, target.to_string(), x, y)
}

/// Linear interpolation over gaps; leading/trailing gaps take the nearest value.
fn interpolate_missing(col: &[Option<f64>]) -> Option<Vec<f64>> {
    let known: Vec<(usize, f64)> = col
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .collect();
    let (&(first_i, first_v), &(last_i, last_v)) = (known.first()?, known.last()?);
    let mut out = vec![0.0; col.len()];
    for i in 0..col.len() {
        out[i] = if i <= first_i {
            first_v
        } else if i >= last_i {
            last_v
        } else if let Some(v) = col[i] {
            v
        } else {
            let k = known.partition_point(|&(j, _)| j < i);
            let (i0, v0) = known[k - 1];
            let (i1, v1) = known[k];
            v0 + (v1 - v0) * (i - i0) as f64 / (i1 - i0) as f64
        };
    }
    Some(out)
}

/// Frames a chronologically ordered series as supervised rows.
///
/// Row `t` carries the covariates and target of steps `t−window+1 ..= t`
/// (flattened step by step) and is labelled with the target at `t+horizon`.
pub fn make_windows(series: &Dataset, window: usize, horizon: usize) -> Result<Dataset> {
    let n = series.len();
    if window == 0 || horizon == 0 || n < window + horizon {
        return Err(Error::SeriesTooShort {
            len: n,
            window,
            horizon,
        });
    }
    let rows = n - window - horizon + 1;
    let mut names = Vec::with_capacity(window * (series.n_features() + 1));
    for lag in (0..window).rev() {
        for f in &series.feature_names {
            names.push(format!("{f}_lag{lag}"));
        }
        names.push(format!("{}_lag{lag}", series.target_name));
    }
    let mut x = Vec::with_capacity(rows * names.len());
    let mut y = Vec::with_capacity(rows);
    for r in 0..rows {
        let t = r + window - 1;
        for step in (t + 1 - window)..=t {
            x.extend_from_slice(series.row(step));
            x.push(series.targets()[step]);
        }
        y.push(series.targets()[t + horizon]);
    }
    let mut out = Dataset::new(names, series.target_name.clone(), x, y)?;
    out.true_sigma = series
        .true_sigma
        .as_ref()
        .map(|s| (0..rows).map(|r| s[r + window - 1 + horizon]).collect());
    Ok(out)
}

/// Chronological split of a raw series followed by windowing inside each
/// segment, so no window draws on steps from a neighbouring segment.
pub fn windowed_splits<T: Scalar>(
    series: &Dataset,
    window: usize,
    horizon: usize,
    fractions: [f64; 3],
) -> Result<Splits<T>> {
    let spec = SplitSpec {
        mode: SplitMode::Chronological,
        fractions,
        seed: 0,
    };
    let indices = spec.indices(series.len())?;
    let framed = indices
        .iter()
        .map(|idx| make_windows(&series.subset(idx), window, horizon))
        .collect::<Result<Vec<_>>>()?;
    let scalers = Scalers::fit(&framed[0])?;
    let offsets = indices.clone().map(|idx| {
        let start = idx[0];
        (0..idx.len() + 1 - window - horizon)
            .map(|r| start + r + window - 1 + horizon)
            .collect::<Vec<_>>()
    });
    Ok(Splits {
        train: scalers.transform(&framed[0])?,
        val: scalers.transform(&framed[1])?,
        test: scalers.transform(&framed[2])?,
        scalers,
        indices: offsets,
    })
}

/// Parameters of the synthetic heteroscedastic regression problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "one")]
    pub dim: usize,
    /// Multiplier on the noise standard deviation; 0 gives a noiseless set.
    #[serde(default = "unit")]
    pub noise_scale: f64,
}

fn one() -> usize {
    1
}

fn unit() -> f64 {
    1.0
}

impl SynthSpec {
    pub fn new(n: usize, seed: u64) -> Self {
        SynthSpec {
            n,
            seed,
            dim: 1,
            noise_scale: 1.0,
        }
    }
}

/// Noise standard deviation of the synthetic problem at `x₀`.
pub fn synth_sigma(x0: f64) -> f64 {
    0.05 + 0.25 * x0
}

/// `x ~ U(0,1)^d`, `y = sin(2πx₀) + σ(x₀)·ε` with `σ(x₀) = 0.05 + 0.25·x₀`.
pub fn synth_heteroscedastic(spec: &SynthSpec) -> Result<Dataset> {
    if spec.n < 100 {
        return Err(Error::Config(format!("synthetic data needs n >= 100, got {}", spec.n)));
    }
    if spec.dim == 0 {
        return Err(Error::Config("synthetic data needs dim >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = Vec::with_capacity(spec.n * spec.dim);
    let mut y = Vec::with_capacity(spec.n);
    let mut sigma = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let row: Vec<f64> = (0..spec.dim).map(|_| rng.random::<f64>()).collect();
        let eps: f64 = StandardNormal.sample(&mut rng);
        let s = spec.noise_scale * synth_sigma(row[0]);
        y.push((2.0 * std::f64::consts::PI * row[0]).sin() + s * eps);
        sigma.push(s);
        x.extend(row);
    }
    let names = (0..spec.dim).map(|j| format!("x{j}")).collect();
    let mut ds = Dataset::new(names, "y".into(), x, y)?;
    ds.true_sigma = Some(sigma);
    Ok(ds)
}

/// Indices of rows whose window would mix two segments; used by tests.
#[doc(hidden)]
pub fn straddling_windows(segment_bounds: &[usize], window_starts: &[(usize, usize)]) -> Vec<usize> {
    let bounds: HashSet<usize> = segment_bounds.iter().copied().collect();
    window_starts
        .iter()
        .enumerate()
        .filter(|(_, &(start, end))| (start + 1..=end).any(|b| bounds.contains(&b)))
        .map(|(i, _)| i)
        .collect()
}
