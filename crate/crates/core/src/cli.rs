//! Command-line interface. Exit codes: 0 success, 2 validation or usage
//! error, 1 internal error.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::Serialize;

use crate::baselines::{self, BaselineMethod, Ranking};
use crate::dataset::{self, CalibrationDataset};
use crate::error::{Error, Result};
use crate::metrics::{self, EvalReport};
use crate::model_file::{load_model, save_model};
use crate::selector::{choose_threshold, coverage_at, coverage_bound, guaranteed_threshold, CoverageBound};
use crate::theorylab::{self, ProjectedModel, SweepSpec, SyntheticSpec};
use crate::train::{train_selective_recalibration, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "selcal", version, about = "Selective recalibration toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the perturbed mixture and write a two-class dataset.
    GenSynth(GenSynthArgs),
    /// Train a selector and recalibrator.
    Train(TrainArgs),
    /// Selective calibration report at one coverage level.
    Eval(EvalArgs),
    /// Metrics over a coverage grid, with normalized areas.
    Sweep(SweepArgs),
    /// Population calibration functionals of a mixture spec.
    Theory(TheoryArgs),
    /// Theory report columns over a grid of mixture parameters.
    TheorySweep(TheorySweepArgs),
    /// Reliability-diagram bins of the accepted instances.
    Reliability(ReliabilityArgs),
    /// Baseline selection on top of the model's recalibrator.
    Baseline(BaselineArgs),
    /// Choose the selector threshold and store it in the model file.
    Threshold(ThresholdArgs),
    /// Shuffle and split a dataset.
    Split(SplitArgs),
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Mixture spec JSON.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Scale logits so this temperature calibrates the inlier region.
    #[arg(long)]
    pub inlier_temperature: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Training config JSON; missing fields take their defaults.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    /// Named preset: camelyon, imagenet or ood.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub beta: f64,
    #[arg(long, default_value_t = metrics::DEFAULT_BINS)]
    pub bins: usize,
    /// Choose the threshold on this dataset instead of on --data.
    #[arg(long)]
    pub tune: Option<PathBuf>,
    /// Use the threshold stored in the model file.
    #[arg(long, conflicts_with = "tune")]
    pub use_model_tau: bool,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// start:end:step, within [0.5, 1.0].
    #[arg(long, default_value = "0.5:1.0:0.05")]
    pub beta_grid: String,
    #[arg(long, default_value_t = metrics::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TheoryArgs {
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Samples for the Monte Carlo cross-check (0 skips it).
    #[arg(long, default_value_t = theorylab::DEFAULT_MC_SAMPLES)]
    pub mc_samples: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TheorySweepArgs {
    /// Sweep spec JSON: a base mixture spec plus parameter lists.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReliabilityArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = metrics::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub method: BaselineMethod,
    #[arg(long, default_value_t = 0.9)]
    pub beta: f64,
    #[arg(long, default_value_t = metrics::DEFAULT_BINS)]
    pub bins: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = baselines::DEFAULT_TREES)]
    pub trees: usize,
    #[arg(long, default_value_t = baselines::DEFAULT_PSI)]
    pub psi: usize,
    #[arg(long, default_value_t = baselines::DEFAULT_MAHALANOBIS_EPS)]
    pub eps: f64,
    /// Also write the ranking as CSV (index, score).
    #[arg(long)]
    pub ranking_out: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ThresholdArgs {
    /// Unlabeled tuning data for the threshold.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 0.9)]
    pub beta: f64,
    /// Raise the empirical target so the Hoeffding lower bound reaches beta.
    #[arg(long)]
    pub guarantee: bool,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Output model file; may equal --model.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Comma-separated fractions summing to 1.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub fractions: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output paths, one per fraction.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub out: Vec<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&s)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

/// Evaluation report plus where the threshold came from.
#[derive(Debug, Serialize)]
pub struct EvalOutput {
    #[serde(flatten)]
    pub report: EvalReport,
    /// `data`, `tune` or `model`.
    pub threshold_source: String,
    /// Hoeffding interval for the population coverage of the threshold,
    /// from the scores the threshold was chosen on.
    pub coverage_bound: Option<CoverageBound>,
}

#[derive(Debug, Serialize)]
pub struct BaselineOutput {
    pub method: BaselineMethod,
    #[serde(flatten)]
    pub report: EvalReport,
    pub parameters: serde_json::Value,
}

/// Two-class logits [−kv, kv] with v = θ̂ᵀx, labels {−1, 1} → {0, 1}.
pub fn synthetic_dataset(
    spec: &SyntheticSpec,
    n: usize,
    seed: u64,
    inlier_temperature: Option<f64>,
) -> Result<CalibrationDataset> {
    let model = spec.resolve()?;
    let theta_hat = theorylab::fit_theta_hat(&model, seed)?;
    let pm = ProjectedModel::new(&model, theta_hat)?;
    let scale = match inlier_temperature {
        None => 1.0,
        Some(t) if t > 0.0 && t.is_finite() => t * pm.a1,
        Some(t) => return Err(Error::Validation(format!("inlier temperature must be positive, got {t}"))),
    };
    let sample = theorylab::sample_synthetic(&model, n, seed.wrapping_add(1))?;
    let mut logits = Array2::<f32>::zeros((n, 2));
    for (i, row) in sample.x.rows().into_iter().enumerate() {
        let v: f64 = row.iter().zip(&pm.theta_hat).map(|(a, b)| a * b).sum();
        logits[[i, 0]] = (-scale * v) as f32;
        logits[[i, 1]] = (scale * v) as f32;
    }
    let labels = sample.y.iter().map(|&y| u32::from(y > 0)).collect();
    let name = format!("synthetic n={n} seed={seed}");
    CalibrationDataset::new(name, sample.x.mapv(|v| v as f32), logits, labels)
}

fn cmd_gen_synth(a: &GenSynthArgs) -> Result<()> {
    let spec: SyntheticSpec = read_json(&a.spec)?;
    let d = synthetic_dataset(&spec, a.n, a.seed, a.inlier_temperature)?;
    dataset::save_dataset(&d, &a.out)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match (&a.config, &a.preset) {
        (Some(p), _) => read_json::<TrainConfig>(p)?,
        (None, Some(name)) => TrainConfig::preset(name)?,
        (None, None) => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(s) = a.noise_std {
        cfg.noise_std = s;
    }
    let d = dataset::load_dataset(&a.data)?;
    let model = train_selective_recalibration(&d, &cfg)?;
    log::info!(
        "trained: loss {:.6} -> {:.6}",
        model.trace.initial_loss,
        model.trace.final_loss
    );
    save_model(&model, &a.out)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let d = dataset::load_dataset(&a.data)?;
    let scores = model.scores(&d)?;
    let (tau, source, bound) = if a.use_model_tau {
        let tau = model
            .selector
            .tau
            .ok_or_else(|| Error::Validation("model file has no threshold; run `selcal threshold` first".into()))?;
        (tau, "model", None)
    } else {
        let (tune_scores, source) = match &a.tune {
            Some(p) => (model.scores(&dataset::load_dataset(p)?)?, "tune"),
            None => (scores.clone(), "data"),
        };
        let tau = choose_threshold(&tune_scores, a.beta)?;
        let bound = coverage_bound(coverage_at(&tune_scores, tau), tune_scores.len(), a.delta)?;
        (tau, source, Some(bound))
    };
    let report = metrics::evaluate_at_threshold(&scores, tau, &model.recalibrator, &d, a.beta, a.bins)?;
    write_json(
        &a.out,
        &EvalOutput {
            report,
            threshold_source: source.to_string(),
            coverage_bound: bound,
        },
    )
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let grid = metrics::parse_grid(&a.beta_grid)?;
    let model = load_model(&a.model)?;
    let d = dataset::load_dataset(&a.data)?;
    let curve = metrics::coverage_auc(&model, &d, &grid, a.bins)?;
    curve.write_csv(create(&a.out)?)
}

fn cmd_theory(a: &TheoryArgs) -> Result<()> {
    let spec: SyntheticSpec = read_json(&a.spec)?;
    let report = theorylab::verify_theorems_with(&spec.resolve()?, a.seed, a.mc_samples)?;
    write_json(&a.out, &report)
}

fn cmd_theory_sweep(a: &TheorySweepArgs) -> Result<()> {
    let spec: SweepSpec = read_json(&a.spec)?;
    let rows = theorylab::theory_sweep(&spec)?;
    theorylab::write_sweep_csv(&rows, create(&a.out)?)
}

fn cmd_reliability(a: &ReliabilityArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let d = dataset::load_dataset(&a.data)?;
    let report = metrics::selective_eval(&model, &d, a.beta, a.bins)?;
    metrics::write_bins_csv(&report.bins, create(&a.out)?)
}

fn cmd_baseline(a: &BaselineArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let d = dataset::load_dataset(&a.data)?;
    let (ranking, parameters): (Ranking, serde_json::Value) = match a.method {
        BaselineMethod::Confidence => {
            let (conf, _) = model.recalibrator.apply_dataset(&d)?;
            (baselines::confidence_rank(&conf)?, serde_json::json!({}))
        }
        BaselineMethod::Iforest => (
            baselines::iforest_rank(d.embeddings_f64().view(), a.trees, a.psi, a.seed)?,
            serde_json::json!({ "trees": a.trees, "psi": a.psi, "seed": a.seed }),
        ),
        BaselineMethod::Mahalanobis => (
            baselines::mahalanobis_rank(d.embeddings_f64().view(), a.eps)?,
            serde_json::json!({ "eps": a.eps }),
        ),
    };
    let report = baselines::evaluate_ranking(&ranking, &model.recalibrator, &d, a.beta, a.bins)?;
    if let Some(p) = &a.ranking_out {
        ranking.write_csv(create(p)?)?;
    }
    write_json(
        &a.out,
        &BaselineOutput {
            method: a.method,
            report,
            parameters,
        },
    )
}

fn cmd_threshold(a: &ThresholdArgs) -> Result<()> {
    let mut model = load_model(&a.model)?;
    let d = dataset::load_dataset(&a.data)?;
    let scores = model.scores(&d)?;
    let tau = if a.guarantee {
        let (tau, bound) = guaranteed_threshold(&scores, a.beta, a.delta)?;
        if bound.lower() < a.beta {
            log::warn!(
                "coverage lower bound {:.4} stays below {} with n_u = {}",
                bound.lower(),
                a.beta,
                scores.len()
            );
        }
        tau
    } else {
        choose_threshold(&scores, a.beta)?
    };
    model.selector.tau = Some(tau);
    save_model(&model, &a.out)
}

fn cmd_split(a: &SplitArgs) -> Result<()> {
    if a.fractions.len() != a.out.len() {
        return Err(Error::Config(format!(
            "{} fractions but {} output paths",
            a.fractions.len(),
            a.out.len()
        )));
    }
    let d = dataset::load_dataset(&a.data)?;
    for (part, path) in dataset::split(&d, &a.fractions, a.seed)?.iter().zip(&a.out) {
        dataset::save_dataset(part, path)?;
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenSynth(a) => cmd_gen_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Theory(a) => cmd_theory(a),
        Command::TheorySweep(a) => cmd_theory_sweep(a),
        Command::Reliability(a) => cmd_reliability(a),
        Command::Baseline(a) => cmd_baseline(a),
        Command::Threshold(a) => cmd_threshold(a),
        Command::Split(a) => cmd_split(a),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_INTERNAL
    }
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SELCAL_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("SELCAL_THREADS must be a non-negative integer, got {raw:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = configure_threads().and_then(|_| run(&cli));
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
