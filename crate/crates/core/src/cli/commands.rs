use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::data::{load_idx, load_idx_labels, load_matrix, make_synthetic, preprocess, split, FeatureMatrix, SplitSpec};
use crate::error::{Error, Result};
use crate::eval::{auc_table_tsv, read_scores_tsv, reports_toml, scores_tsv, EvalReport, LabeledScores, ScoreRow};
use crate::novelty::{Metric, Parts, ReferenceSet, Scorer};
use crate::selftest;
use crate::vae::{builtin_architecture, load_checkpoint, save_checkpoint, train_observed, TrainLog, VaeModel};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRAIN_LOG_FILE: &str = "train_log.tsv";
pub const SCORES_FILE: &str = "scores.tsv";
pub const REPORT_FILE: &str = "report.toml";
pub const ROC_FILE: &str = "roc.tsv";
pub const AUC_TABLE_FILE: &str = "auc_table.tsv";
pub const CONFIG_FILE: &str = "config.toml";

const IDX_IMAGE_MAGIC: [u8; 4] = [0, 0, 8, 3];

pub(crate) fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn require(path: Option<&PathBuf>, key: &str) -> Result<PathBuf> {
    let p = path.ok_or_else(|| Error::config(format!("{key} is not set")))?;
    if !p.exists() {
        return Err(Error::config(format!("{key}: {} does not exist", p.display())));
    }
    Ok(p.clone())
}

/// Loads IDX images (by magic) or a matrix file, with optional IDX labels.
pub fn load_dataset(path: &Path, labels: Option<&Path>) -> Result<FeatureMatrix> {
    let mut head = [0u8; 4];
    let is_idx = std::fs::File::open(path)
        .and_then(|mut f| std::io::Read::read_exact(&mut f, &mut head))
        .is_ok()
        && head == IDX_IMAGE_MAGIC;
    let m = if is_idx { load_idx(path)? } else { load_matrix(path)? };
    match labels {
        Some(l) => {
            let l = load_idx_labels(l)?;
            m.with_labels(l.into_iter().map(i32::from).collect())
        }
        None => Ok(m),
    }
}

fn write_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write(&dir.join(CONFIG_FILE), cfg.to_toml()?)
}

/// Trains `model` on the rows of `data`, printing one line per epoch.
pub(crate) fn fit(model: VaeModel, data: &FeatureMatrix, cfg: &RunConfig, tag: &str) -> Result<(VaeModel, TrainLog)> {
    train_observed(model, &data.to_tensor(), &cfg.train, |r| {
        eprintln!(
            "{tag}epoch {:>3}  train {:.4}  validation {:.4}",
            r.epoch, r.train_loss, r.val_loss
        );
    })
}

pub fn cmd_train(cfg: &RunConfig) -> Result<VaeModel> {
    let path = require(cfg.data.train.as_ref(), "data.train")?;
    let mut data = load_dataset(&path, None)?;
    let stats = if cfg.data.preprocess {
        let (d, s) = preprocess(&data, None)?;
        data = d;
        Some(s)
    } else {
        None
    };
    let arch = builtin_architecture(&cfg.model.architecture, cfg.model.family)?;
    let mut model = VaeModel::new(arch, cfg.model.family, cfg.seed)?;
    model.set_preprocess(stats);
    eprintln!("training {} on {} x {}", cfg.model.architecture, data.n(), data.d());
    let (model, log) = fit(model, &data, cfg, "")?;
    save_checkpoint(&model, cfg.output.join(CHECKPOINT_FILE))?;
    write(&cfg.output.join(TRAIN_LOG_FILE), log.to_tsv())?;
    write_config(cfg, &cfg.output)?;
    println!(
        "best epoch {} of {}; checkpoint {}",
        log.best_epoch,
        log.epochs.len() - 1,
        cfg.output.join(CHECKPOINT_FILE).display()
    );
    Ok(model)
}

/// Scores of `test` under every metric, metric by metric, as table rows.
pub fn score_matrix(
    model: Option<&VaeModel>,
    reference: &FeatureMatrix,
    test: &FeatureMatrix,
    metrics: &[Metric],
    cfg: &RunConfig,
) -> Result<Vec<ScoreRow>> {
    let parts = Parts::for_metrics(metrics);
    let refs = ReferenceSet::build(model, reference, parts, cfg.score.subsample)?;
    let scorer = Scorer::new(model, Some(&refs), cfg.score.options());
    let rows: Vec<f64> = test.values().iter().map(|&v| v as f64).collect();
    let mut out = Vec::with_capacity(metrics.len() * test.n());
    for &metric in metrics {
        let scores = scorer.score_batch(metric, &rows, cfg.seed)?;
        out.extend(scores.into_iter().enumerate().map(|(i, r)| ScoreRow {
            sample_id: i,
            metric: metric.id().to_string(),
            score: r.score,
            label: test.labels().map(|l| l[i]),
        }));
    }
    Ok(out)
}

pub fn cmd_score(cfg: &RunConfig) -> Result<Vec<ScoreRow>> {
    let metrics = cfg.score.metric_list()?;
    let model = match &cfg.model.checkpoint {
        Some(p) => Some(load_checkpoint(require(Some(p), "model.checkpoint")?)?),
        None => None,
    };
    if model.is_none() {
        if let Some(m) = metrics.iter().find(|m| m.needs_model()) {
            return Err(Error::config(format!("{m} needs model.checkpoint")));
        }
    }
    let test_path = require(cfg.data.test.as_ref(), "data.test")?;
    let ref_path = match &cfg.data.reference {
        Some(p) => require(Some(p), "data.reference")?,
        None => require(cfg.data.train.as_ref(), "data.reference (or data.train)")?,
    };
    let mut reference = load_dataset(&ref_path, None)?;
    let labels = cfg.data.test_labels.as_ref().map(|p| require(Some(p), "data.test_labels")).transpose()?;
    let mut test = load_dataset(&test_path, labels.as_deref())?;
    let stats = model.as_ref().and_then(|m| m.preprocess().cloned());
    match stats {
        Some(s) => {
            reference = preprocess(&reference, Some(&s))?.0;
            test = preprocess(&test, Some(&s))?.0;
        }
        None if cfg.data.preprocess => {
            let (r, s) = preprocess(&reference, None)?;
            test = preprocess(&test, Some(&s))?.0;
            reference = r;
        }
        None => {}
    }
    let rows = score_matrix(model.as_ref(), &reference, &test, &metrics, cfg)?;
    write(&cfg.output.join(SCORES_FILE), scores_tsv(&rows))?;
    write_config(cfg, &cfg.output)?;
    println!(
        "{} scores ({} inputs x {} metrics) in {}",
        rows.len(),
        test.n(),
        metrics.len(),
        cfg.output.join(SCORES_FILE).display()
    );
    Ok(rows)
}

fn read_labels(path: &Path) -> Result<Vec<i32>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| Error::data(format!("{} line {}: bad label {l:?}", path.display(), i + 1)))
        })
        .collect()
}

/// AUC report per metric, in order of first appearance in `rows`.
pub fn evaluate_rows(rows: &[ScoreRow], labels: Option<&[i32]>, bins: usize) -> Result<Vec<EvalReport>> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.metric.as_str()) {
            order.push(&r.metric);
        }
    }
    order
        .into_iter()
        .map(|metric| {
            let mine: Vec<&ScoreRow> = rows.iter().filter(|r| r.metric == metric).collect();
            let label = |r: &ScoreRow| -> Result<i32> {
                match (labels, r.label) {
                    (Some(l), _) => l.get(r.sample_id).copied().ok_or_else(|| {
                        Error::data(format!("no label for sample {} in the label file", r.sample_id))
                    }),
                    (None, Some(l)) => Ok(l),
                    (None, None) => Err(Error::data(format!(
                        "sample {} of {metric} has no label; set eval.labels",
                        r.sample_id
                    ))),
                }
            };
            let ls = LabeledScores::from_int_labels(
                mine.iter().map(|r| r.score).collect(),
                &mine.iter().map(|r| label(r)).collect::<Result<Vec<_>>>()?,
            )?;
            EvalReport::new(metric, &ls, bins)
        })
        .collect()
}

/// `metric, fpr, tpr, threshold` rows for several reports.
pub fn roc_table_tsv(reports: &[EvalReport]) -> String {
    let mut out = String::from("metric\tfpr\ttpr\tthreshold\n");
    for r in reports {
        for p in &r.roc {
            writeln!(out, "{}\t{}\t{}\t{}", r.metric, p.fpr, p.tpr, p.threshold).unwrap();
        }
    }
    out
}

pub(crate) fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<()> {
    write(&dir.join(REPORT_FILE), reports_toml(reports)?)?;
    write(&dir.join(ROC_FILE), roc_table_tsv(reports))?;
    write(&dir.join(AUC_TABLE_FILE), auc_table_tsv(reports))
}

pub fn cmd_eval(cfg: &RunConfig) -> Result<Vec<EvalReport>> {
    let default = cfg.output.join(SCORES_FILE);
    let scores = require(Some(cfg.eval.scores.as_ref().unwrap_or(&default)), "eval.scores")?;
    let rows = read_scores_tsv(&scores)?;
    let labels = match &cfg.eval.labels {
        Some(p) => Some(read_labels(&require(Some(p), "eval.labels")?)?),
        None => None,
    };
    let reports = evaluate_rows(&rows, labels.as_deref(), cfg.eval.bins)?;
    write_reports(&cfg.output, &reports)?;
    print!("{}", auc_table_tsv(&reports));
    Ok(reports)
}

/// Outcome of the synthetic benchmark.
#[derive(Debug, Clone)]
pub struct SynthReport {
    pub reports: Vec<EvalReport>,
    pub baseline_auc: f64,
    /// Metrics other than the baseline with AUC at least baseline - 0.05.
    pub at_par: Vec<String>,
}

/// Trains on the normal cluster of a synthetic data set and compares every
/// metric with the feature-space nearest-neighbour baseline.
pub fn cmd_synth_check(cfg: &RunConfig) -> Result<SynthReport> {
    let s = &cfg.synthetic;
    let data = make_synthetic(&s.generator(cfg.seed))?;
    let labels = data.labels().expect("synthetic data is labeled").to_vec();
    let normal: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == 0).collect();
    let novel: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == 1).collect();
    let sp = split(
        normal.len(),
        &SplitSpec::Fractions {
            train: s.train_fraction,
            validation: 1.0 - s.train_fraction,
            seed: cfg.seed,
        },
    )?;
    let train_rows: Vec<usize> = sp.train.iter().map(|&k| normal[k]).collect();
    let test_rows: Vec<usize> = sp.validation.iter().map(|&k| normal[k]).chain(novel).collect();
    let train = data.select(&train_rows)?;
    let test = data.select(&test_rows)?;

    let arch = builtin_architecture(&s.architecture, cfg.model.family)?;
    let model = VaeModel::new(arch, cfg.model.family, cfg.seed)?;
    eprintln!(
        "synthetic d={} separation={}: training on {} normal rows",
        s.d,
        s.separation,
        train.n()
    );
    let (model, log) = fit(model, &train, cfg, "")?;
    save_checkpoint(&model, cfg.output.join(CHECKPOINT_FILE))?;
    write(&cfg.output.join(TRAIN_LOG_FILE), log.to_tsv())?;

    let metrics = cfg.score.metric_list()?;
    let mut metrics_with_baseline = metrics.clone();
    if !metrics_with_baseline.contains(&Metric::BaselineNn) {
        metrics_with_baseline.push(Metric::BaselineNn);
    }
    let rows = score_matrix(Some(&model), &train, &test, &metrics_with_baseline, cfg)?;
    write(&cfg.output.join(SCORES_FILE), scores_tsv(&rows))?;
    let reports = evaluate_rows(&rows, None, cfg.eval.bins)?;
    write_reports(&cfg.output, &reports)?;
    write_config(cfg, &cfg.output)?;

    let baseline_auc = reports
        .iter()
        .find(|r| r.metric == Metric::BaselineNn.id())
        .expect("baseline scored")
        .auc;
    let at_par: Vec<String> = reports
        .iter()
        .filter(|r| r.metric != Metric::BaselineNn.id() && r.auc >= baseline_auc - 0.05)
        .map(|r| r.metric.clone())
        .collect();
    print!("{}", auc_table_tsv(&reports));
    println!(
        "baseline-nn AUC {baseline_auc:.4}; {} of {} metrics within 0.05 of it or better",
        at_par.len(),
        reports.len() - 1
    );
    Ok(SynthReport {
        reports,
        baseline_auc,
        at_par,
    })
}

/// Which selftest suites to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    All,
    Oracle,
    ClosedForm,
    Gradients,
    Auc,
}

pub fn cmd_selftest(cfg: &RunConfig, suite: Suite) -> Result<Vec<selftest::SuiteReport>> {
    let seed = cfg.seed;
    let reports = match suite {
        Suite::All => selftest::run_all(seed)?,
        Suite::Oracle => vec![selftest::oracle_suite(seed)?],
        Suite::ClosedForm => vec![selftest::closed_form_suite(seed)?],
        Suite::Gradients => vec![selftest::gradient_suite(seed)?],
        Suite::Auc => vec![selftest::auc_suite(seed)?],
    };
    for r in &reports {
        print!("{r}");
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed()).map(|r| r.suite).collect();
    if failed.is_empty() {
        Ok(reports)
    } else {
        Err(Error::Numerical(format!("selftest failed: {}", failed.join(", "))))
    }
}
