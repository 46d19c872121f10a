//! Command-line front end: a TOML run configuration, flag overrides and one
//! function per command.
//!
//! Output layout under `output`:
//!
//! ```text
//! model.ckpt      trained model with its preprocessing statistics
//! train_log.tsv   per-epoch training and validation negative ELBO
//! scores.tsv      sample_id, metric, score, label
//! report.toml     AUC and score histograms per metric
//! roc.tsv         metric, fpr, tpr, threshold
//! auc_table.tsv   AUC per metric (per metric and digit for reproduce-mnist)
//! config.toml     the resolved configuration
//! digit<k>/       per-digit outputs of reproduce-mnist
//! ```

mod commands;
mod config;
mod mnist;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use commands::{
    cmd_eval, cmd_score, cmd_selftest, cmd_synth_check, cmd_train, evaluate_rows, load_dataset, roc_table_tsv,
    score_matrix, Suite, SynthReport, AUC_TABLE_FILE, CHECKPOINT_FILE, CONFIG_FILE, REPORT_FILE, ROC_FILE,
    SCORES_FILE, TRAIN_LOG_FILE,
};
pub use config::{
    apply_override, overrides_from_assignments, parse_metrics, DataConfig, EvalConfig, MnistConfig, ModelConfig,
    RunConfig, ScoreConfig, SynthConfig,
};
pub use mnist::{reproduce_mnist, DigitResult, MnistReport, TRAIN_IMAGES, TRAIN_LABELS};

use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "vae-novelty", version, about = "Novelty detection with variational autoencoders")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set train.lr=0.0005`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output directory.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a VAE on normal data.
    Train(TrainArgs),
    /// Score inputs with one or more novelty metrics.
    Score(ScoreArgs),
    /// AUC, ROC and histograms from a scores table.
    Eval(EvalArgs),
    /// MNIST one-digit-out benchmark.
    ReproduceMnist(MnistArgs),
    /// Every metric against the feature-space baseline on synthetic data.
    SynthCheck(SynthArgs),
    /// Run the built-in verification suites.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub architecture: Option<String>,
    /// gaussian or bernoulli
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub preprocess: bool,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Comma-separated metric ids, or `all`.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    #[arg(long)]
    pub n_samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub bins: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MnistArgs {
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    /// Comma-separated novelty digits.
    #[arg(long, value_delimiter = ',')]
    pub digits: Vec<i32>,
    #[arg(long)]
    pub latent: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub metrics: Vec<String>,
    #[arg(long)]
    pub max_train: Option<usize>,
    #[arg(long)]
    pub max_test: Option<usize>,
    /// Retrain even if a matching checkpoint exists.
    #[arg(long)]
    pub fresh: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub suite: Suite,
}

fn path(p: &std::path::Path) -> toml::Value {
    toml::Value::String(p.display().to_string())
}

fn strings(v: &[String]) -> toml::Value {
    toml::Value::Array(v.iter().cloned().map(toml::Value::String).collect())
}

impl Cli {
    /// Flag values as configuration overrides; `--set` comes last and wins.
    fn overrides(&self) -> Result<Vec<(String, toml::Value)>> {
        let mut o: Vec<(String, toml::Value)> = Vec::new();
        let mut put = |k: &str, v: toml::Value| o.push((k.to_string(), v));
        if let Some(p) = &self.output {
            put("output", path(p));
        }
        if let Some(s) = self.seed {
            put("seed", toml::Value::Integer(s as i64));
        }
        if let Some(w) = self.workers {
            put("workers", toml::Value::Integer(w as i64));
        }
        match &self.command {
            Command::Train(a) => {
                if let Some(p) = &a.data {
                    put("data.train", path(p));
                }
                if let Some(v) = &a.architecture {
                    put("model.architecture", toml::Value::String(v.clone()));
                }
                if let Some(v) = &a.family {
                    put("model.family", toml::Value::String(v.clone()));
                }
                if let Some(v) = a.epochs {
                    put("train.max_epochs", toml::Value::Integer(v as i64));
                }
                if let Some(v) = a.lr {
                    put("train.lr", toml::Value::Float(v));
                }
                if a.preprocess {
                    put("data.preprocess", toml::Value::Boolean(true));
                }
            }
            Command::Score(a) => {
                if let Some(p) = &a.checkpoint {
                    put("model.checkpoint", path(p));
                }
                if let Some(p) = &a.reference {
                    put("data.reference", path(p));
                }
                if let Some(p) = &a.input {
                    put("data.test", path(p));
                }
                if !a.metrics.is_empty() {
                    put("score.metrics", strings(&a.metrics));
                }
                if let Some(v) = a.n_samples {
                    put("score.n_samples", toml::Value::Integer(v as i64));
                }
            }
            Command::Eval(a) => {
                if let Some(p) = &a.scores {
                    put("eval.scores", path(p));
                }
                if let Some(p) = &a.labels {
                    put("eval.labels", path(p));
                }
                if let Some(v) = a.bins {
                    put("eval.bins", toml::Value::Integer(v as i64));
                }
            }
            Command::ReproduceMnist(a) => {
                if let Some(p) = &a.mnist_dir {
                    put("mnist.dir", path(p));
                }
                if !a.digits.is_empty() {
                    put(
                        "mnist.digits",
                        toml::Value::Array(a.digits.iter().map(|&d| toml::Value::Integer(d.into())).collect()),
                    );
                }
                if let Some(v) = a.latent {
                    put("mnist.latent", toml::Value::Integer(v as i64));
                }
                if let Some(v) = a.epochs {
                    put("train.max_epochs", toml::Value::Integer(v as i64));
                }
                if !a.metrics.is_empty() {
                    put("mnist.metrics", strings(&a.metrics));
                }
                if let Some(v) = a.max_train {
                    put("mnist.max_train", toml::Value::Integer(v as i64));
                }
                if let Some(v) = a.max_test {
                    put("mnist.max_test", toml::Value::Integer(v as i64));
                }
                if a.fresh {
                    put("mnist.resume", toml::Value::Boolean(false));
                }
            }
            Command::SynthCheck(a) => {
                if let Some(v) = a.separation {
                    put("synthetic.separation", toml::Value::Float(v));
                }
                if let Some(v) = a.epochs {
                    put("train.max_epochs", toml::Value::Integer(v as i64));
                }
            }
            Command::Selftest(_) => {}
        }
        o.extend(overrides_from_assignments(&self.set)?);
        Ok(o)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides()?)
    }
}

/// Resolves the configuration and runs the command on a pool of
/// `workers` threads.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = cli.resolve()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Train(_) => cmd_train(&cfg).map(drop),
        Command::Score(_) => cmd_score(&cfg).map(drop),
        Command::Eval(_) => cmd_eval(&cfg).map(drop),
        Command::ReproduceMnist(_) => reproduce_mnist(&cfg).map(drop),
        Command::SynthCheck(_) => cmd_synth_check(&cfg).map(drop),
        Command::Selftest(a) => cmd_selftest(&cfg, a.suite).map(drop),
    })
}
