use std::path::PathBuf;
use std::process::{Command, ExitCode};

use clap::{Args, Parser, Subcommand};
use log::info;

use mmdcal::data::SynthSpec;
use mmdcal::experiment::{
    cmd_compare, cmd_evaluate, cmd_synth, cmd_train, evaluate_all, ExperimentConfig, Method, SEED_ENV,
};
use mmdcal::verification::{run_convergence_study, run_self_tests, StudyConfig};
use mmdcal::Error;

const EXIT_GENERIC: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_DIVERGED: u8 = 4;
const EXIT_SELF_TEST: u8 = 5;

/// Calibrated heteroscedastic regression by kernel MMD fine-tuning.
///
/// Exit codes: 0 success, 1 I/O or other failure, 2 configuration error,
/// 3 data error, 4 training diverged, 5 self-test failure.
#[derive(Parser)]
#[command(name = "mmdcal", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every seed of an experiment config into <out_dir>/<method>/seed-<k>.
    Train(TrainArgs),
    /// Score run directories on their test split.
    Evaluate(EvaluateArgs),
    /// Tabulate evaluated runs or method directories side by side.
    Compare(CompareArgs),
    /// Write a synthetic heteroscedastic dataset as CSV.
    Synth(SynthArgs),
    /// Run gradient, MMD-oracle, PAV and quantile self-tests.
    Check,
    /// Train at increasing sample sizes and record calibration error.
    Study(StudyArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Override the method: hnn, hnn+isr or hnn+mmd.
    #[arg(long)]
    method: Option<Method>,
    /// Train only this seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Adam learning rate [default: 1e-4].
    #[arg(long)]
    lr: Option<f64>,
    /// L2 weight decay [default: 1e-3].
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Minibatch size [default: 128].
    #[arg(long)]
    batch_size: Option<usize>,
    /// Maximum NLL epochs [default: 200].
    #[arg(long)]
    stage1_epochs: Option<usize>,
    /// Maximum MMD epochs [default: 100].
    #[arg(long)]
    stage2_epochs: Option<usize>,
    /// Train seeds in this many parallel worker processes.
    #[arg(short, long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directories to evaluate.
    run_dirs: Vec<PathBuf>,
    /// Evaluate every seed of this config and write summary.csv.
    #[arg(short, long, conflicts_with = "run_dirs")]
    config: Option<PathBuf>,
    /// Also write intervals at every grid level.
    #[arg(long)]
    all_levels: bool,
}

#[derive(Args)]
struct CompareArgs {
    /// Evaluated run directories or method directories (at least two).
    #[arg(required = true, num_args = 2..)]
    dirs: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(short, long, default_value_t = 8000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    dim: usize,
    #[arg(long, default_value_t = 1.0)]
    noise_scale: f64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [500, 2000, 8000])]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2])]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 64)]
    hidden_dim: usize,
    #[arg(short, long, default_value = "convergence.csv")]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::POutOfRange(_) | Error::FractionInvalid(_) => EXIT_CONFIG,
        Error::FileNotFound(_)
        | Error::ColumnMissing(_)
        | Error::ParseError { .. }
        | Error::SeriesTooShort { .. }
        | Error::TooFewPoints(_)
        | Error::EmptySplit(_)
        | Error::EmptySample(_)
        | Error::DegenerateVariance
        | Error::MissingCheckpoint(_)
        | Error::IncompatibleGrids => EXIT_DATA,
        Error::Diverged { .. } => EXIT_DIVERGED,
        _ => EXIT_GENERIC,
    }
}

fn load_train_config(args: &TrainArgs) -> mmdcal::Result<ExperimentConfig> {
    let mut c = ExperimentConfig::load(&args.config)?;
    if let Some(m) = args.method {
        c.method = m;
    }
    if let Some(s) = args.seed {
        c.seeds = vec![s];
    }
    if let Some(d) = &args.out_dir {
        c.out_dir = d.clone();
    }
    let t = &mut c.train;
    t.lr = args.lr.unwrap_or(t.lr);
    t.weight_decay = args.weight_decay.unwrap_or(t.weight_decay);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.stage1_epochs = args.stage1_epochs.unwrap_or(t.stage1_epochs);
    t.stage2_epochs = args.stage2_epochs.unwrap_or(t.stage2_epochs);
    c.validate()?;
    Ok(c)
}

/// Re-invokes this binary once per seed on a resolved config, at most
/// `jobs` at a time. Returns the first nonzero child exit code.
fn train_parallel(config: &ExperimentConfig, jobs: usize) -> mmdcal::Result<u8> {
    let dir = config.method_dir();
    std::fs::create_dir_all(&dir)?;
    let resolved = dir.join("experiment.toml");
    std::fs::write(&resolved, config.to_toml()?)?;
    let exe = std::env::current_exe()?;
    let mut worst = 0;
    for chunk in config.seeds.chunks(jobs) {
        let children = chunk
            .iter()
            .map(|s| {
                Command::new(&exe)
                    .arg("train")
                    .arg("--config")
                    .arg(&resolved)
                    .env(SEED_ENV, s.to_string())
                    .spawn()
            })
            .collect::<std::io::Result<Vec<_>>>()?;
        for mut child in children {
            let code = child.wait()?.code().unwrap_or(EXIT_GENERIC as i32) as u8;
            if worst == 0 {
                worst = code;
            }
        }
    }
    Ok(worst)
}

fn train(args: &TrainArgs) -> mmdcal::Result<u8> {
    let config = load_train_config(args)?;
    if args.jobs > 1 && config.seeds.len() > 1 {
        return train_parallel(&config, args.jobs);
    }
    for dir in cmd_train(&config)? {
        println!("{}", dir.display());
    }
    Ok(0)
}

fn evaluate(args: &EvaluateArgs) -> mmdcal::Result<u8> {
    if let Some(path) = &args.config {
        let config = ExperimentConfig::load(path)?;
        let summary = evaluate_all(&config, args.all_levels)?;
        println!("{:<16} {:>14} {:>14} {:>3}", "metric", "mean", "std_err", "n");
        for s in summary {
            let show = |v: Option<f64>| v.map_or("null".to_string(), |v| format!("{v:.6}"));
            println!("{:<16} {:>14} {:>14} {:>3}", s.metric, show(s.mean), show(s.std_err), s.n);
        }
        return Ok(0);
    }
    if args.run_dirs.is_empty() {
        return Err(Error::Config("give run directories or --config".into()));
    }
    for dir in &args.run_dirs {
        let r = cmd_evaluate(dir, args.all_levels)?;
        println!(
            "{}: ecpe {:.4} mcpe {:.4} epiw {:.4} rmse {:.4}",
            dir.display(),
            r.ecpe,
            r.mcpe,
            r.epiw,
            r.rmse
        );
    }
    Ok(0)
}

fn compare(args: &CompareArgs) -> mmdcal::Result<u8> {
    let table = cmd_compare(&args.dirs)?;
    print!("{table}");
    if let Some(p) = &args.csv {
        table.write_csv(p)?;
    }
    Ok(0)
}

fn synth(args: &SynthArgs) -> mmdcal::Result<u8> {
    let spec = SynthSpec {
        n: args.n,
        seed: args.seed,
        dim: args.dim,
        noise_scale: args.noise_scale,
    };
    let data = cmd_synth(&spec, &args.out)?;
    info!("wrote {} rows to {}", data.len(), args.out.display());
    Ok(0)
}

fn check() -> u8 {
    let report = run_self_tests();
    print!("{report}");
    if report.all_passed() {
        0
    } else {
        EXIT_SELF_TEST
    }
}

fn study(args: &StudyArgs) -> mmdcal::Result<u8> {
    let config = StudyConfig {
        sizes: args.sizes.clone(),
        seeds: args.seeds.clone(),
        hidden_dim: args.hidden_dim,
        ..Default::default()
    };
    let study = run_convergence_study(&config)?;
    study.write_csv(&args.out)?;
    println!("{:>8} {:>14} {:>14} {:>12}", "size", "ecpe_1sided", "ecpe_2sided", "mmd2");
    for s in study.summary() {
        println!("{:>8} {:>14.6} {:>14.6} {:>12.3e}", s.size, s.ecpe_one_sided, s.ecpe_two_sided, s.mmd2);
    }
    Ok(0)
}

fn report_error(e: &Error) {
    eprintln!("error: {e}");
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Train(a) => train(a),
        Cmd::Evaluate(a) => evaluate(a),
        Cmd::Compare(a) => compare(a),
        Cmd::Synth(a) => synth(a),
        Cmd::Check => Ok(check()),
        Cmd::Study(a) => study(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            report_error(&e);
            ExitCode::from(exit_code(&e))
        }
    }
}
