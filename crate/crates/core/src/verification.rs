//! Oracle harness: gradient checks, an independent MMD evaluator, an
//! exhaustive PAV check, and the coverage convergence study.
//!
//! The oracles here deliberately avoid the kernel, PAV and tape code they
//! check; they are slow, direct transcriptions of the definitions.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{check_many, Tensor};
use crate::data::{split, synth_heteroscedastic, SplitSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::kernels::{mmd2_biased, mmd2_biased_value, mmd2_unbiased, sample_predictions, KernelMixture, DEFAULT_BANDWIDTHS};
use crate::losses::nll_loss;
use crate::metrics::normal::{cdf_f64, inverse_cdf_f64};
use crate::metrics::{CalibrationReport, ConfidenceGrid};
use crate::model::{hnn_forward, HnnModel};
use crate::recalibration::pav;
use crate::train::{train_two_stage, TrainConfig};

/// Squared MMD (V-statistic) by explicit double loops over the definition
/// `k(a, b) = Σ_σ exp(−(a − b)² / (2σ²))`.
pub fn mmd2_oracle(real: &[f64], model: &[f64], bandwidths: &[f64]) -> f64 {
    let k = |a: f64, b: f64| -> f64 {
        let mut s = 0.0;
        for &bw in bandwidths {
            s += (-(a - b) * (a - b) / (2.0 * bw * bw)).exp();
        }
        s
    };
    let mean_gram = |xs: &[f64], ys: &[f64]| -> f64 {
        let mut s = 0.0;
        for &a in xs {
            for &b in ys {
                s += k(a, b);
            }
        }
        s / (xs.len() as f64 * ys.len() as f64)
    };
    mean_gram(real, real) + mean_gram(model, model) - 2.0 * mean_gram(real, model)
}

/// Isotonic least squares by the min–max formula
/// `fit_i = max_{j ≤ i} min_{k ≥ i} mean(v_j..=v_k)` (weighted means).
pub fn isotonic_oracle(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let n = values.len();
    let avg = |j: usize, k: usize| -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for t in j..=k {
            num += weights[t] * values[t];
            den += weights[t];
        }
        num / den
    };
    (0..n)
        .map(|i| {
            (0..=i)
                .map(|j| (i..n).map(|k| avg(j, k)).fold(f64::INFINITY, f64::min))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect()
}

/// Outcome of one named self-test.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SelfTestReport {
    pub checks: Vec<CheckOutcome>,
}

impl SelfTestReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    fn push(&mut self, name: &'static str, result: Result<String>) {
        let (passed, detail) = match result {
            Ok(d) => (true, d),
            Err(e) => (false, e.to_string()),
        };
        self.checks.push(CheckOutcome { name, passed, detail });
    }
}

impl fmt::Display for SelfTestReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail)?;
        }
        Ok(())
    }
}

fn fail(msg: String) -> Error {
    Error::Config(msg)
}

/// Compares [`mmd2_biased_value`] against [`mmd2_oracle`] on random cases
/// with sizes in `1..=max_size`, drawn from shifted and scaled normals.
pub fn check_mmd_oracle(cases: usize, max_size: usize, seed: u64, tol: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixture = KernelMixture::<f64>::default();
    let mut worst = 0.0f64;
    for case in 0..cases {
        let n = rng.random_range(1..=max_size);
        let m = rng.random_range(1..=max_size);
        let shift = rng.random_range(-2.0..2.0);
        let scale = rng.random_range(0.01..3.0);
        let mut draw = |len: usize, mu: f64| -> Vec<f64> {
            (0..len)
                .map(|_| mu + scale * Distribution::<f64>::sample(&StandardNormal, &mut rng))
                .collect()
        };
        let real = draw(n, 0.0);
        let model = draw(m, shift);
        let fast = mmd2_biased_value(&real, &model, &mixture)?.value;
        let slow = mmd2_oracle(&real, &model, &DEFAULT_BANDWIDTHS);
        let err = (fast - slow).abs();
        if !(err <= tol) {
            return Err(fail(format!(
                "case {case}: |{fast} - {slow}| = {err:e} > {tol:e}; real = {real:?}; model = {model:?}"
            )));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Exhaustive PAV check on every sequence of length ≤ `max_len` over
/// `{0, 1, 2, 3}` with unit weights.
pub fn check_pav_exhaustive(max_len: usize, tol: f64) -> Result<usize> {
    let mut checked = 0;
    for len in 1..=max_len {
        for code in 0..4usize.pow(len as u32) {
            let values: Vec<f64> = (0..len).map(|t| ((code / 4usize.pow(t as u32)) % 4) as f64).collect();
            let w = vec![1.0; len];
            let fast = pav(&values, &w)?;
            let slow = isotonic_oracle(&values, &w);
            if fast.iter().zip(&slow).any(|(a, b)| (a - b).abs() > tol) {
                return Err(fail(format!("pav({values:?}) = {fast:?}, oracle {slow:?}")));
            }
            checked += 1;
        }
    }
    Ok(checked)
}

/// `Φ(Φ⁻¹(p)) = p` over a fine grid, with the forward map from `erfc`.
pub fn check_quantile_round_trip(tol: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 1..10_000 {
        let p = k as f64 / 10_000.0;
        let err = (cdf_f64(inverse_cdf_f64(p)?) - p).abs();
        if !(err <= tol) {
            return Err(fail(format!("round trip at p = {p}: error {err:e}")));
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Worst relative gradient error per objective over `points` random points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientErrors {
    pub nll: f64,
    pub mmd: f64,
    pub stage1_end_to_end: f64,
    pub stage2_end_to_end: f64,
}

impl GradientErrors {
    pub fn max(&self) -> f64 {
        self.nll.max(self.mmd).max(self.stage1_end_to_end).max(self.stage2_end_to_end)
    }
}

/// Central-difference checks of the NLL, the MMD loss, and both training
/// objectives differentiated through a small HNN.
pub fn check_gradients(points: usize, seed: u64) -> Result<GradientErrors> {
    const EPS: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mixture = KernelMixture::<f64>::default();
    let mut out = GradientErrors {
        nll: 0.0,
        mmd: 0.0,
        stage1_end_to_end: 0.0,
        stage2_end_to_end: 0.0,
    };
    let uniform = |rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(lo..hi)).collect()
    };
    for _ in 0..points {
        let n = rng.random_range(2..12);
        let y = uniform(&mut rng, n, 0.0, 1.0);

        let mu = uniform(&mut rng, n, -0.5, 1.5);
        let s = uniform(&mut rng, n, -3.0, 1.0);
        let r = check_many(
            |v| nll_loss(v[0], v[1], &y),
            &[Tensor::vector(mu), Tensor::vector(s)],
            EPS,
        )?;
        out.nll = out.nll.max(r.max_relative_error);

        let m = rng.random_range(1..12);
        let samples = uniform(&mut rng, m, -1.0, 2.0);
        let r = check_many(|v| mmd2_biased(&y, v[0], &mixture), &[Tensor::vector(samples)], EPS)?;
        out.mmd = out.mmd.max(r.max_relative_error);

        let d = rng.random_range(1..4);
        // Random biases keep pre-activations off the ReLU kink, where the
        // zero-bias initialisation can put whole rows.
        let mut model = HnnModel::<f64>::init(d, 5, rng.random())?;
        for p in model.params_mut() {
            p.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        }
        let x = Tensor::matrix(n, d, uniform(&mut rng, n * d, 0.0, 1.0))?;
        let noise: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let r = check_many(
            |p| {
                let (mu, s) = hnn_forward(p, p[0].tape().constant(x.clone()))?;
                nll_loss(mu, s, &y)
            },
            model.params(),
            EPS,
        )?;
        out.stage1_end_to_end = out.stage1_end_to_end.max(r.max_relative_error);
        let r = check_many(
            |p| {
                let (mu, s) = hnn_forward(p, p[0].tape().constant(x.clone()))?;
                let samples = sample_predictions(mu, s, &noise, true)?;
                mmd2_biased(&y, samples, &mixture)
            },
            model.params(),
            EPS,
        )?;
        out.stage2_end_to_end = out.stage2_end_to_end.max(r.max_relative_error);
    }
    Ok(out)
}

/// Runs every oracle check at its release tolerance.
pub fn run_self_tests() -> SelfTestReport {
    let mut report = SelfTestReport::default();
    report.push(
        "gradients",
        check_gradients(20, 11).and_then(|e| {
            if e.max() < 1e-5 {
                Ok(format!("{e:?}"))
            } else {
                Err(fail(format!("relative error above 1e-5: {e:?}")))
            }
        }),
    );
    report.push(
        "mmd oracle",
        check_mmd_oracle(200, 200, 12, 1e-10).map(|w| format!("200 cases, worst |diff| {w:e}")),
    );
    report.push(
        "pav exhaustive",
        check_pav_exhaustive(6, 1e-12).map(|n| format!("{n} sequences")),
    );
    report.push(
        "quantile round trip",
        check_quantile_round_trip(1e-8).map(|w| format!("worst error {w:e}")),
    );
    report
}

/// Parameters of the coverage convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub hidden_dim: usize,
    pub fractions: [f64; 3],
    pub train: TrainConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            sizes: vec![500, 2000, 8000],
            seeds: vec![0, 1, 2],
            hidden_dim: 64,
            fractions: [0.8, 0.1, 0.1],
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub size: usize,
    pub ecpe_one_sided: f64,
    pub ecpe_two_sided: f64,
    pub mmd2: f64,
    pub seed: u64,
}

/// Per-size medians over seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudySummary {
    pub size: usize,
    pub ecpe_one_sided: f64,
    pub ecpe_two_sided: f64,
    pub mmd2: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceStudy {
    pub rows: Vec<StudyRow>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl ConvergenceStudy {
    pub fn summary(&self) -> Vec<StudySummary> {
        let mut sizes: Vec<usize> = self.rows.iter().map(|r| r.size).collect();
        sizes.dedup();
        sizes
            .into_iter()
            .map(|size| {
                let at: Vec<&StudyRow> = self.rows.iter().filter(|r| r.size == size).collect();
                let med = |f: fn(&StudyRow) -> f64| median(&at.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(f64::NAN);
                StudySummary {
                    size,
                    ecpe_one_sided: med(|r| r.ecpe_one_sided),
                    ecpe_two_sided: med(|r| r.ecpe_two_sided),
                    mmd2: med(|r| r.mmd2),
                }
            })
            .collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// One study point: two-stage training on synthetic data of the given size,
/// scored on its test split. `mmd2` is the unbiased estimate between test
/// targets and one draw from the predictive distributions, so its small-sample
/// bias does not masquerade as a trend.
pub fn study_point(config: &StudyConfig, size: usize, seed: u64) -> Result<StudyRow> {
    let data = synth_heteroscedastic(&SynthSpec::new(size, seed))?;
    let splits = split::<f64>(
        &data,
        &SplitSpec {
            fractions: config.fractions,
            seed,
            ..Default::default()
        },
    )?;
    let train = TrainConfig {
        seed,
        ..config.train.clone()
    };
    let init = HnnModel::init(data.n_features(), config.hidden_dim, seed)?;
    let (model, _) = train_two_stage(init, &splits.train, &splits.val, &train)?;
    let preds = model.predict_distribution(&splits.test.x)?;
    let report = CalibrationReport::gaussian("hnn+mmd", &preds, &splits.test.y, &ConfidenceGrid::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..preds.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let samples = crate::kernels::sample_values(&preds, &noise)?;
    let mixture = KernelMixture::<f64>::from_f64(&train.bandwidths)?;
    let mmd2 = mmd2_unbiased(&splits.test.y, &samples, &mixture)?.value;
    Ok(StudyRow {
        size,
        ecpe_one_sided: report.ecpe_one_sided,
        ecpe_two_sided: report.ecpe,
        mmd2,
        seed,
    })
}

/// Trains once per (size, seed) and records test-split calibration.
pub fn run_convergence_study(config: &StudyConfig) -> Result<ConvergenceStudy> {
    if config.sizes.is_empty() || config.seeds.is_empty() {
        return Err(Error::Config("study needs at least one size and one seed".into()));
    }
    if config.sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config(format!("study sizes must increase: {:?}", config.sizes)));
    }
    let mut rows = Vec::with_capacity(config.sizes.len() * config.seeds.len());
    for &size in &config.sizes {
        for &seed in &config.seeds {
            let row = study_point(config, size, seed)?;
            log::info!("study point {row:?}");
            rows.push(row);
        }
    }
    Ok(ConvergenceStudy { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, Primitive, Var};

    #[test]
    fn mmd_oracle_hand_value() {
        // Single points 0 and 1, one kernel of width 1: 2 − 2e^{−1/2}.
        let v = mmd2_oracle(&[0.0], &[1.0], &[1.0]);
        assert!((v - 0.7869386805747332).abs() < 1e-15);
        assert_eq!(mmd2_oracle(&[0.2, 0.9], &[0.2, 0.9], &DEFAULT_BANDWIDTHS), 0.0);
    }

    #[test]
    fn isotonic_oracle_examples() {
        assert_eq!(isotonic_oracle(&[3.0, 1.0], &[1.0, 1.0]), vec![2.0, 2.0]);
        assert_eq!(isotonic_oracle(&[1.0, 3.0, 2.0], &[1.0; 3]), vec![1.0, 2.5, 2.5]);
    }

    #[test]
    fn oracles_agree_with_implementations() {
        assert!(check_mmd_oracle(50, 60, 1, 1e-10).unwrap() < 1e-10);
        assert_eq!(check_pav_exhaustive(4, 1e-12).unwrap(), 4 + 16 + 64 + 256);
        assert!(check_quantile_round_trip(1e-8).unwrap() < 1e-8);
    }

    #[test]
    fn gradient_checks_pass() {
        let e = check_gradients(3, 2).unwrap();
        assert!(e.max() < 1e-5, "{e:?}");
    }

    /// exp with a backward pass that is off by a factor of two.
    struct BrokenExp;

    impl Primitive<f64> for BrokenExp {
        fn name(&self) -> &'static str {
            "broken_exp"
        }

        fn backward(&self, _: &[&Tensor<f64>], output: &Tensor<f64>, grad_out: &[f64]) -> Vec<Vec<f64>> {
            vec![output.data().iter().zip(grad_out).map(|(y, g)| 2.0 * y * g).collect()]
        }
    }

    fn broken_exp<'t>(x: Var<'t, f64>) -> crate::Result<Var<'t, f64>> {
        let value = x.value();
        let out = Tensor::new(value.shape().to_vec(), value.data().iter().map(|v| v.exp()).collect())?;
        x.tape().custom(&[x], out, Box::new(BrokenExp))
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let point = Tensor::vector(vec![0.1, -0.3, 0.5]);
        let err = finite_difference_check(|v| broken_exp(v[0])?.sum(), &point, 1e-6).unwrap();
        assert!(err > 0.5, "{err}");
        let ok = finite_difference_check(|v| v[0].exp()?.sum(), &point, 1e-6).unwrap();
        assert!(ok < 1e-8);
    }

    #[test]
    fn oracle_disagreement_names_inputs() {
        // A tolerance no float sum can meet on nontrivial input forces failure.
        let err = check_mmd_oracle(5, 5, 3, -1.0).unwrap_err().to_string();
        assert!(err.contains("case 0") && err.contains("real = ["), "{err}");
    }

    #[test]
    fn self_tests_pass() {
        let r = run_self_tests();
        assert!(r.all_passed(), "{r}");
        assert_eq!(r.checks.len(), 4);
    }

    #[test]
    fn single_size_study_is_one_row_per_seed() {
        let config = StudyConfig {
            sizes: vec![200],
            seeds: vec![4],
            hidden_dim: 8,
            train: TrainConfig {
                lr: 1e-2,
                stage1_epochs: 3,
                stage2_epochs: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let study = run_convergence_study(&config).unwrap();
        assert_eq!(study.rows.len(), 1);
        let r = study.rows[0];
        assert!(r.ecpe_one_sided.is_finite() && r.ecpe_two_sided.is_finite() && r.mmd2.is_finite());
        assert_eq!(study_point(&config, 200, 4).unwrap(), r);
        assert_eq!(study.summary().len(), 1);

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("convergence.csv");
        study.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("size,ecpe_one_sided,ecpe_two_sided,mmd2,seed\n"));
    }

    #[test]
    fn study_config_validation() {
        let bad = StudyConfig {
            sizes: vec![800, 500],
            ..Default::default()
        };
        assert!(run_convergence_study(&bad).is_err());
        let empty = StudyConfig {
            seeds: vec![],
            ..Default::default()
        };
        assert!(run_convergence_study(&empty).is_err());
    }

    #[test]
    fn median_values() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
