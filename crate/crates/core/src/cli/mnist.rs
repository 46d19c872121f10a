use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::commands::{
    evaluate_rows, fit, score_matrix, write, write_reports, AUC_TABLE_FILE, CHECKPOINT_FILE, CONFIG_FILE,
    SCORES_FILE, TRAIN_LOG_FILE,
};
use super::config::{parse_metrics, RunConfig};
use crate::data::{load_mnist, one_digit_out, FeatureMatrix};
use crate::error::{Error, Result};
use crate::eval::{scores_tsv, EvalReport};
use crate::nn_index::subsample_positions;
use crate::vae::{builtin_architecture, load_checkpoint, save_checkpoint, DecoderFamily, TrainConfig, VaeModel};

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
const FINGERPRINT_FILE: &str = "fingerprint.toml";
const TRAIN_SECONDS_FILE: &str = "train_seconds.txt";

/// Everything that determines a digit's trained model.
#[derive(Serialize)]
struct Fingerprint<'a> {
    digit: i32,
    seed: u64,
    architecture: &'a str,
    family: DecoderFamily,
    train_fraction: f64,
    max_train: Option<usize>,
    train: &'a TrainConfig,
}

#[derive(Debug, Clone)]
pub struct DigitResult {
    pub digit: i32,
    pub reports: Vec<EvalReport>,
    /// Training time in seconds, as recorded when a reused checkpoint was
    /// trained; `None` if that record is missing.
    pub train_seconds: Option<f64>,
    /// Time spent building the reference set and scoring.
    pub score_seconds: f64,
    pub resumed: bool,
    /// Epochs run; `None` for a reused checkpoint.
    pub epochs: Option<usize>,
}

impl DigitResult {
    pub fn auc(&self, metric: &str) -> Option<f64> {
        self.reports.iter().find(|r| r.metric == metric).map(|r| r.auc)
    }
}

#[derive(Debug, Clone)]
pub struct MnistReport {
    pub metrics: Vec<String>,
    pub digits: Vec<DigitResult>,
    pub seconds: f64,
}

impl MnistReport {
    /// Mean AUC of `metric` over the digits.
    pub fn mean_auc(&self, metric: &str) -> Option<f64> {
        let v: Option<Vec<f64>> = self.digits.iter().map(|d| d.auc(metric)).collect();
        v.map(|v| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Metrics as rows, novelty digits as columns, plus the mean.
    pub fn table_tsv(&self) -> String {
        let mut out = String::from("metric");
        for d in &self.digits {
            write!(out, "\tdigit{}", d.digit).unwrap();
        }
        out.push_str("\tmean\n");
        for m in &self.metrics {
            out.push_str(m);
            for d in &self.digits {
                write!(out, "\t{}", d.auc(m).unwrap_or(f64::NAN)).unwrap();
            }
            writeln!(out, "\t{}", self.mean_auc(m).unwrap_or(f64::NAN)).unwrap();
        }
        out
    }
}

fn architecture_name(cfg: &RunConfig) -> String {
    if cfg.mnist.architecture == "mnist_conv" {
        format!("mnist_conv_z{}", cfg.mnist.latent)
    } else {
        cfg.mnist.architecture.clone()
    }
}

fn subsample(m: &FeatureMatrix, count: Option<usize>, seed: u64) -> Result<FeatureMatrix> {
    match count {
        Some(c) if c < m.n() => m.select(&subsample_positions(m.n(), c, seed)?),
        _ => Ok(m.clone()),
    }
}

/// Caps each class of a 0/1-labeled test set at `count` rows.
fn cap_classes(test: &FeatureMatrix, count: Option<usize>, seed: u64) -> Result<FeatureMatrix> {
    let Some(c) = count else { return Ok(test.clone()) };
    let labels = test.labels().expect("one-digit-out test sets are labeled");
    let mut keep = Vec::new();
    for class in [0, 1] {
        let rows: Vec<usize> = (0..test.n()).filter(|&i| labels[i] == class).collect();
        if rows.len() <= c {
            keep.extend(rows);
        } else {
            keep.extend(subsample_positions(rows.len(), c, seed ^ class as u64)?.into_iter().map(|k| rows[k]));
        }
    }
    test.select(&keep)
}

struct Trained {
    model: VaeModel,
    seconds: Option<f64>,
    resumed: bool,
    epochs: Option<usize>,
}

fn load_or_train(cfg: &RunConfig, dir: &Path, digit: i32, train: &FeatureMatrix) -> Result<Trained> {
    let arch_name = architecture_name(cfg);
    let fingerprint = toml::to_string(&Fingerprint {
        digit,
        seed: cfg.seed,
        architecture: &arch_name,
        family: cfg.mnist.family,
        train_fraction: cfg.mnist.train_fraction,
        max_train: cfg.mnist.max_train,
        train: &cfg.train,
    })
    .map_err(|e| Error::config(format!("fingerprint: {e}")))?;
    let ckpt = dir.join(CHECKPOINT_FILE);
    let fp_path = dir.join(FINGERPRINT_FILE);
    if cfg.mnist.resume && ckpt.exists() && std::fs::read_to_string(&fp_path).ok().as_deref() == Some(&fingerprint) {
        eprintln!("digit {digit}: reusing {}", ckpt.display());
        let seconds = std::fs::read_to_string(dir.join(TRAIN_SECONDS_FILE))
            .ok()
            .and_then(|t| t.trim().parse().ok());
        return Ok(Trained {
            model: load_checkpoint(&ckpt)?,
            seconds,
            resumed: true,
            epochs: None,
        });
    }
    let arch = builtin_architecture(&arch_name, cfg.mnist.family)?;
    let model = VaeModel::new(arch, cfg.mnist.family, cfg.seed)?;
    eprintln!("digit {digit}: training {arch_name} on {} images", train.n());
    let start = Instant::now();
    let (model, log) = fit(model, train, cfg, &format!("digit {digit}: "))?;
    let secs = start.elapsed().as_secs_f64();
    save_checkpoint(&model, &ckpt)?;
    write(&dir.join(TRAIN_LOG_FILE), log.to_tsv())?;
    write(&dir.join(TRAIN_SECONDS_FILE), format!("{secs}\n"))?;
    write(&fp_path, &fingerprint)?;
    Ok(Trained {
        model,
        seconds: Some(secs),
        resumed: false,
        epochs: Some(log.epochs.len() - 1),
    })
}

/// One-digit-out benchmark: for every digit, train on the other nine and
/// score held-out normal images against the novel digit.
pub fn reproduce_mnist(cfg: &RunConfig) -> Result<MnistReport> {
    let start = Instant::now();
    let images: PathBuf = cfg.mnist.dir.join(TRAIN_IMAGES);
    let labels: PathBuf = cfg.mnist.dir.join(TRAIN_LABELS);
    for p in [&images, &labels] {
        if !p.exists() {
            return Err(Error::config(format!(
                "MNIST file {} not found; set mnist.dir or run scripts/fetch_mnist.sh",
                p.display()
            )));
        }
    }
    let data = load_mnist(&images, &labels)?;
    let metrics = parse_metrics(&cfg.mnist.metrics)?;
    let mut digits = Vec::new();
    for &digit in &cfg.mnist.digits {
        let dir = cfg.output.join(format!("digit{digit}"));
        let split = one_digit_out(&data, digit, cfg.mnist.train_fraction, cfg.seed)?;
        let train = subsample(&split.train, cfg.mnist.max_train, cfg.seed)?;
        let test = cap_classes(&split.test, cfg.mnist.max_test, cfg.seed)?;
        let trained = load_or_train(cfg, &dir, digit, &train)?;
        eprintln!("digit {digit}: scoring {} test images", test.n());
        let scoring = Instant::now();
        let rows = score_matrix(Some(&trained.model), &train, &test, &metrics, cfg)?;
        let score_seconds = scoring.elapsed().as_secs_f64();
        write(&dir.join(SCORES_FILE), scores_tsv(&rows))?;
        let reports = evaluate_rows(&rows, None, cfg.eval.bins)?;
        write_reports(&dir, &reports)?;
        for r in &reports {
            eprintln!("digit {digit}: {} AUC {:.4}", r.metric, r.auc);
        }
        digits.push(DigitResult {
            digit,
            reports,
            train_seconds: trained.seconds,
            score_seconds,
            resumed: trained.resumed,
            epochs: trained.epochs,
        });
    }
    let report = MnistReport {
        metrics: metrics.iter().map(|m| m.id().to_string()).collect(),
        digits,
        seconds: start.elapsed().as_secs_f64(),
    };
    write(&cfg.output.join(AUC_TABLE_FILE), report.table_tsv())?;
    write(&cfg.output.join(CONFIG_FILE), cfg.to_toml()?)?;
    print!("{}", report.table_tsv());
    Ok(report)
}
