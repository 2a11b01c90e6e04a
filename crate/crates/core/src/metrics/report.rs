//! Aggregated calibration report and its on-disk forms.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::accuracy::{accuracy_lenient, Accuracy};
use super::calibration::{
    central_tails, coverage_with, ecpe, mcpe, one_sided_coverage_with, rows_from, width_stats,
    ConfidenceGrid, ReliabilityRow,
};
use crate::error::Result;
use crate::model::GaussianPrediction;
use crate::scalar::Scalar;

/// Level at which interval widths and `intervals.csv` are reported.
pub const DEFAULT_INTERVAL_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub method: String,
    pub n_test: usize,
    pub levels: Vec<f64>,
    /// Two-sided central-interval coverage per level.
    pub coverage: Vec<f64>,
    /// One-sided `y ≤ F⁻¹(p)` coverage per level.
    pub coverage_one_sided: Vec<f64>,
    pub ecpe: f64,
    pub mcpe: f64,
    pub ecpe_one_sided: f64,
    pub mcpe_one_sided: f64,
    pub interval_level: f64,
    pub epiw: f64,
    pub mpiw: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub rse: Option<f64>,
    pub smape: f64,
}

/// One row of `intervals.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalRow {
    pub index: usize,
    pub y: f64,
    pub mu: f64,
    pub lower: f64,
    pub upper: f64,
}

impl CalibrationReport {
    /// Scores any predictive model given per-row point predictions and a
    /// per-row quantile function, all in target units.
    pub fn from_quantiles<T, Q>(
        method: &str,
        y: &[T],
        mu: &[T],
        grid: &ConfidenceGrid,
        interval_level: f64,
        quantile: Q,
    ) -> Result<Self>
    where
        T: Scalar,
        Q: Fn(usize, T) -> Result<T>,
    {
        let coverage = coverage_with(y, grid, &quantile)?;
        let one_sided = one_sided_coverage_with(y, grid, &quantile)?;
        let accuracy: Accuracy = accuracy_lenient(y, mu)?;
        let rows = interval_rows(y, mu, interval_level, &quantile)?;
        let widths: Vec<f64> = rows.iter().map(|r| r.upper - r.lower).collect();
        let (epiw, mpiw) = width_stats(&widths)?;
        Ok(CalibrationReport {
            method: method.to_string(),
            n_test: y.len(),
            levels: grid.levels().to_vec(),
            ecpe: ecpe(grid, &coverage)?.as_f64(),
            mcpe: mcpe(grid, &coverage)?.as_f64(),
            ecpe_one_sided: ecpe(grid, &one_sided)?.as_f64(),
            mcpe_one_sided: mcpe(grid, &one_sided)?.as_f64(),
            coverage: coverage.iter().map(|c| c.as_f64()).collect(),
            coverage_one_sided: one_sided.iter().map(|c| c.as_f64()).collect(),
            interval_level,
            epiw,
            mpiw,
            rmse: accuracy.rmse,
            r2: accuracy.r2,
            rse: accuracy.rse,
            smape: accuracy.smape,
        })
    }

    pub fn gaussian<T: Scalar>(
        method: &str,
        preds: &[GaussianPrediction<T>],
        y: &[T],
        grid: &ConfidenceGrid,
    ) -> Result<Self> {
        if preds.len() != y.len() {
            return Err(crate::Error::length("targets", preds.len(), y.len()));
        }
        let mu: Vec<T> = preds.iter().map(|p| p.mu).collect();
        Self::from_quantiles(method, y, &mu, grid, DEFAULT_INTERVAL_LEVEL, |i, p| {
            preds[i].quantile(p)
        })
    }

    pub fn grid(&self) -> Result<ConfidenceGrid> {
        ConfidenceGrid::new(self.levels.clone())
    }

    pub fn reliability(&self) -> Vec<ReliabilityRow> {
        let grid = ConfidenceGrid::new(self.levels.clone()).expect("report grid");
        rows_from(&grid, &self.coverage)
    }

    /// Named scalar metrics in table order; `None` marks an undefined value.
    pub fn metrics(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("ecpe", Some(self.ecpe)),
            ("mcpe", Some(self.mcpe)),
            ("ecpe_one_sided", Some(self.ecpe_one_sided)),
            ("mcpe_one_sided", Some(self.mcpe_one_sided)),
            ("epiw", Some(self.epiw)),
            ("mpiw", Some(self.mpiw)),
            ("rmse", Some(self.rmse)),
            ("r2", self.r2),
            ("rse", self.rse),
            ("smape", Some(self.smape)),
        ]
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        writeln!(f)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_reader(File::open(path)?)?)
    }
}

/// Interval bounds for every row at one level.
pub fn interval_rows<T, Q>(y: &[T], mu: &[T], level: f64, quantile: Q) -> Result<Vec<IntervalRow>>
where
    T: Scalar,
    Q: Fn(usize, T) -> Result<T>,
{
    if y.len() != mu.len() {
        return Err(crate::Error::length("point predictions", y.len(), mu.len()));
    }
    let (lo, hi) = central_tails(T::lit(level))?;
    y.iter()
        .zip(mu)
        .enumerate()
        .map(|(index, (&yi, &mi))| {
            Ok(IntervalRow {
                index,
                y: yi.as_f64(),
                mu: mi.as_f64(),
                lower: quantile(index, lo)?.as_f64(),
                upper: quantile(index, hi)?.as_f64(),
            })
        })
        .collect()
}

pub fn write_reliability_csv(path: &Path, rows: &[ReliabilityRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_intervals_csv(path: &Path, rows: &[IntervalRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Minimal static SVG of a reliability curve against the diagonal.
pub fn reliability_svg(rows: &[ReliabilityRow], title: &str) -> String {
    const SIZE: f64 = 320.0;
    const PAD: f64 = 40.0;
    let plot = SIZE - 2.0 * PAD;
    let px = |v: f64| PAD + v * plot;
    let py = |v: f64| SIZE - PAD - v * plot;
    let points: Vec<String> = rows
        .iter()
        .map(|r| format!("{:.2},{:.2}", px(r.expected), py(r.observed)))
        .collect();
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SIZE}\" height=\"{SIZE}\" viewBox=\"0 0 {SIZE} {SIZE}\">\n"
    );
    svg += &format!(
        "  <rect x=\"{PAD}\" y=\"{PAD}\" width=\"{plot}\" height=\"{plot}\" fill=\"none\" stroke=\"#888\"/>\n"
    );
    svg += &format!(
        "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n",
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    svg += &format!(
        "  <polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n",
        points.join(" ")
    );
    svg += &format!(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{}</text>\n",
        SIZE / 2.0,
        PAD / 2.0,
        escape(title)
    );
    svg += &format!(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\">expected confidence</text>\n",
        SIZE / 2.0,
        SIZE - 10.0
    );
    svg += &format!(
        "  <text x=\"12\" y=\"{}\" text-anchor=\"middle\" font-size=\"11\" transform=\"rotate(-90 12 {})\">observed confidence</text>\n",
        SIZE / 2.0,
        SIZE / 2.0
    );
    svg += "</svg>\n";
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
