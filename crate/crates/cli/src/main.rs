//! `tgraph` command-line driver: synthetic data, preprocessing, training,
//! detection and reports.

mod commands;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use tgraph::anomaly::{Approach, Clusterer};
use tgraph::data::{Aggregation, Task, TrimBy};

#[derive(Parser, Debug)]
#[command(name = "tgraph", version, about = "Time-digraph models for signal quality detection")]
struct Cli {
    /// JSON run configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Preset model name.
    #[arg(long, global = true)]
    model: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic ECG-like dataset.
    Generate(GenerateArgs),
    /// Smooths, downsamples and windows a dataset, split by recording.
    Preprocess(PreprocessArgs),
    /// Trains a classifier on a supervised preprocessed dataset.
    TrainClassifier(TrainArgs),
    /// Two-stage autoencoder training with training-set refinement.
    TrainAe(TrainAeArgs),
    /// Scores errors sets with an autoencoder and labels the test set.
    Detect(DetectArgs),
    /// Metrics of a classifier or of a labelled errors CSV.
    Evaluate(EvaluateArgs),
    /// Checks the convolution-as-message-passing construction.
    VerifyLemma1(Lemma1Args),
    /// Finite-difference check of a model's parameter gradients.
    Gradcheck(GradcheckArgs),
    /// Aggregates repeated runs into a mean ± std table.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    recordings: Option<usize>,
    /// Length of each recording in seconds (rounded down to 5 s slices).
    #[arg(long)]
    seconds: Option<usize>,
    #[arg(long)]
    anomaly_rate: Option<f64>,
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Raw dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Seed of the recording split; defaults to `--seed`.
    #[arg(long)]
    split_seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Preprocessed dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args, Debug)]
struct TrainAeArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Epochs of the retraining stage.
    #[arg(long)]
    second_epochs: Option<usize>,
    /// Fraction of worst-reconstructed training slices to drop.
    #[arg(long)]
    discard_fraction: Option<f64>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[arg(long)]
    data: Option<PathBuf>,
    /// Directory written by `train-ae`.
    #[arg(long)]
    model_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    approach: Option<ApproachArg>,
    #[arg(long, value_enum)]
    clusterer: Option<ClustererArg>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Errors CSV with `true_label` and `pred_label` columns.
    #[arg(long, conflicts_with_all = ["data", "model_dir"])]
    errors: Option<PathBuf>,
    /// Preprocessed dataset, for classifier evaluation on its test part.
    #[arg(long, requires = "model_dir")]
    data: Option<PathBuf>,
    #[arg(long)]
    model_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct Lemma1Args {
    #[arg(long, default_value_t = 100)]
    cases: usize,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Coordinates checked per parameter tensor.
    #[arg(long, default_value_t = 2)]
    per_param: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Metrics JSON files, one per run.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long, default_value = "Results")]
    title: String,
    #[arg(long, value_enum, default_value_t = AggregationArg::Auto)]
    aggregation: AggregationArg,
    #[arg(long, value_enum, default_value_t = TrimByArg::Accuracy)]
    trim_by: TrimByArg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TaskArg {
    Supervised,
    Unsupervised,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ApproachArg {
    A,
    B,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ClustererArg {
    Kmeans,
    Dbscan,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum AggregationArg {
    Auto,
    DropExtremes,
    All,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum TrimByArg {
    Accuracy,
    EachMetric,
}

/// Settings shared by the subcommands, loadable from `--config`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<String>,
    /// Raw or preprocessed dataset directory, depending on the command.
    pub data: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub task: Option<Task>,
    pub recordings: Option<usize>,
    pub seconds: Option<usize>,
    pub anomaly_rate: Option<f64>,
    pub epochs: Option<usize>,
    pub second_epochs: Option<usize>,
    pub discard_fraction: Option<f64>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub approach: Option<Approach>,
    pub clusterer: Option<Clusterer>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    fn overlay(&mut self, other: RunConfig) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            model, data, model_dir, seed, split_seed, task, recordings, seconds, anomaly_rate, epochs, second_epochs,
            discard_fraction, batch_size, lr, approach, clusterer, out
        );
    }

    pub fn require_out(&self) -> Result<PathBuf> {
        self.out.clone().ok_or_else(|| anyhow!("--out is required"))
    }

    pub fn require_data(&self) -> Result<PathBuf> {
        self.data.clone().ok_or_else(|| anyhow!("--data is required"))
    }

    pub fn require_model(&self) -> Result<String> {
        self.model.clone().ok_or_else(|| anyhow!("--model is required"))
    }

    pub fn require_model_dir(&self) -> Result<PathBuf> {
        self.model_dir.clone().ok_or_else(|| anyhow!("--model-dir is required"))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

fn train_overrides(t: &TrainArgs) -> RunConfig {
    RunConfig {
        data: t.data.clone(),
        epochs: t.epochs,
        batch_size: t.batch_size,
        lr: t.lr,
        ..Default::default()
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => dataset::read_json::<RunConfig>(path)?,
        None => RunConfig::default(),
    };
    cfg.overlay(RunConfig {
        seed: cli.seed,
        model: cli.model,
        out: cli.out,
        ..Default::default()
    });
    match cli.command {
        Command::Generate(a) => {
            cfg.overlay(RunConfig {
                recordings: a.recordings,
                seconds: a.seconds,
                anomaly_rate: a.anomaly_rate,
                ..Default::default()
            });
            commands::generate(&cfg)
        }
        Command::Preprocess(a) => {
            cfg.overlay(RunConfig {
                data: a.data,
                split_seed: a.split_seed,
                task: a.task.map(|t| match t {
                    TaskArg::Supervised => Task::Supervised,
                    TaskArg::Unsupervised => Task::Unsupervised,
                }),
                ..Default::default()
            });
            commands::preprocess(&cfg)
        }
        Command::TrainClassifier(a) => {
            cfg.overlay(train_overrides(&a));
            commands::train_classifier(&cfg)
        }
        Command::TrainAe(a) => {
            cfg.overlay(train_overrides(&a.train));
            cfg.overlay(RunConfig {
                second_epochs: a.second_epochs,
                discard_fraction: a.discard_fraction,
                ..Default::default()
            });
            commands::train_ae(&cfg)
        }
        Command::Detect(a) => {
            cfg.overlay(RunConfig {
                data: a.data,
                model_dir: a.model_dir,
                approach: a.approach.map(|x| match x {
                    ApproachArg::A => Approach::A,
                    ApproachArg::B => Approach::B,
                }),
                clusterer: a.clusterer.map(|x| match x {
                    ClustererArg::Kmeans => Clusterer::Kmeans,
                    ClustererArg::Dbscan => Clusterer::Dbscan,
                }),
                ..Default::default()
            });
            commands::detect(&cfg)
        }
        Command::Evaluate(a) => match a.errors {
            Some(path) => commands::evaluate_errors(&cfg, &path),
            None => {
                cfg.overlay(RunConfig {
                    data: a.data,
                    model_dir: a.model_dir,
                    ..Default::default()
                });
                commands::evaluate_classifier(&cfg)
            }
        },
        Command::VerifyLemma1(a) => commands::verify_lemma1(&cfg, a.cases, a.tol),
        Command::Gradcheck(a) => commands::gradcheck(&cfg, a.per_param, a.tol),
        Command::Report(a) => {
            let aggregation = match a.aggregation {
                AggregationArg::Auto => Aggregation::Auto,
                AggregationArg::DropExtremes => Aggregation::DropExtremes,
                AggregationArg::All => Aggregation::All,
            };
            let trim_by = match a.trim_by {
                TrimByArg::Accuracy => TrimBy::Accuracy,
                TrimByArg::EachMetric => TrimBy::EachMetric,
            };
            commands::report(&cfg, &a.runs, &a.title, aggregation, trim_by)
        }
    }
}

/// One-line JSON error for scripts.
fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    tgraph::alloc::retain_freed_memory();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().lines().next().unwrap_or("invalid arguments")));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<tgraph::Error>().map_or("failed", tgraph::Error::kind);
            let message = format!("{e:#}").replace('\n', " ");
            eprintln!("{}", error_line(kind, &message));
            ExitCode::FAILURE
        }
    }
}
