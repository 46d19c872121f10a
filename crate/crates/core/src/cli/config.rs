use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::error::{Error, Result};
use crate::eval::DEFAULT_BINS;
use crate::latent_search::SearchConfig;
use crate::novelty::{Metric, ScoreOptions, Subsample};
use crate::vae::{DecoderFamily, TrainConfig};

/// Everything a command reads. Each command ignores the sections it does
/// not use; unknown keys anywhere are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed for model initialisation, splits, training and scoring.
    pub seed: u64,
    /// Worker threads; 0 uses every core. Results do not depend on it.
    pub workers: usize,
    pub output: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub score: ScoreConfig,
    pub eval: EvalConfig,
    pub mnist: MnistConfig,
    pub synthetic: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 0,
            output: PathBuf::from("out"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            score: ScoreConfig::default(),
            eval: EvalConfig::default(),
            mnist: MnistConfig::default(),
            synthetic: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Normal training data: matrix container, delimited text or IDX images.
    pub train: Option<PathBuf>,
    /// Reference set for scoring; defaults to `train`.
    pub reference: Option<PathBuf>,
    /// Inputs to score.
    pub test: Option<PathBuf>,
    /// IDX label file for IDX test images.
    pub test_labels: Option<PathBuf>,
    /// Apply the two-stage intensity normalisation before training.
    pub preprocess: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub architecture: String,
    pub family: DecoderFamily,
    /// Checkpoint to score with; `train` writes `<output>/model.ckpt`.
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: "dense46_z8".into(),
            family: DecoderFamily::Gaussian,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreConfig {
    /// Metric ids, or `["all"]`.
    pub metrics: Vec<String>,
    pub n_samples: usize,
    pub search: SearchConfig,
    pub subsample: Option<Subsample>,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        let o = ScoreOptions::default();
        ScoreConfig {
            metrics: vec!["all".into()],
            n_samples: o.n_samples,
            search: o.search,
            subsample: None,
        }
    }
}

impl ScoreConfig {
    pub fn options(&self) -> ScoreOptions {
        ScoreOptions {
            n_samples: self.n_samples,
            search: self.search.clone(),
        }
    }

    pub fn metric_list(&self) -> Result<Vec<Metric>> {
        parse_metrics(&self.metrics)
    }
}

/// Parses metric ids; `all` expands to every metric in report order.
pub fn parse_metrics(ids: &[String]) -> Result<Vec<Metric>> {
    let mut out: Vec<Metric> = Vec::new();
    for id in ids {
        let add: Vec<Metric> = if id == "all" {
            Metric::ALL.to_vec()
        } else {
            vec![id.parse()?]
        };
        for m in add {
            if !out.contains(&m) {
                out.push(m);
            }
        }
    }
    if out.is_empty() {
        return Err(Error::config("no metrics requested"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Scores table to evaluate; defaults to `<output>/scores.tsv`.
    pub scores: Option<PathBuf>,
    /// One 0/1 label per line, by sample id, for tables without labels.
    pub labels: Option<PathBuf>,
    pub bins: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            scores: None,
            labels: None,
            bins: DEFAULT_BINS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MnistConfig {
    /// Directory with `train-images-idx3-ubyte` and `train-labels-idx1-ubyte`.
    pub dir: PathBuf,
    pub digits: Vec<i32>,
    pub architecture: String,
    pub family: DecoderFamily,
    pub latent: usize,
    /// Share of the normal digits used for training.
    pub train_fraction: f64,
    /// Uniform subsample of the training split, for quick runs.
    pub max_train: Option<usize>,
    /// Uniform subsample of each test class, for quick runs.
    pub max_test: Option<usize>,
    pub metrics: Vec<String>,
    /// Reuse a finished checkpoint trained with the same settings.
    pub resume: bool,
}

impl Default for MnistConfig {
    fn default() -> Self {
        MnistConfig {
            dir: PathBuf::from("data/mnist"),
            digits: vec![0, 2, 3, 6],
            architecture: "mnist_conv".into(),
            family: DecoderFamily::Bernoulli,
            latent: 64,
            train_fraction: 0.8,
            max_train: None,
            max_test: None,
            metrics: [
                "latent-nn-euclid",
                "latent-nn-bhatt",
                "latent-density-log",
                "vae-reg",
                "recon-det-err",
                "recon-det-lik",
            ]
            .map(String::from)
            .to_vec(),
            resume: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub d: usize,
    pub n_normal: usize,
    pub n_abnormal: usize,
    /// Distance between the cluster centres in units of the noise scale.
    pub separation: f64,
    pub architecture: String,
    /// Share of the normal samples used for training.
    pub train_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            d: 46,
            n_normal: 2000,
            n_abnormal: 400,
            separation: 4.35,
            architecture: "dense46_z8".into(),
            train_fraction: 0.8,
        }
    }
}

impl SynthConfig {
    pub fn generator(&self, seed: u64) -> SyntheticConfig {
        SyntheticConfig {
            d: self.d,
            n_normal: self.n_normal,
            n_abnormal: self.n_abnormal,
            separation: self.separation,
            seed,
        }
    }
}

/// Parses `value` as a TOML value, falling back to a plain string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

/// Sets the dotted `key` in `table`, creating intermediate tables.
pub fn set_key(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut t = table;
    for p in path {
        t = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::config(format!("{key}: {p} is not a table")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

/// `key=value` override as given on the command line.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config(format!("override {assignment:?} is not key=value")))?;
    set_key(table, key.trim(), parse_value(value.trim()))
}

fn has_key(table: &toml::Table, key: &str) -> bool {
    let parts: Vec<&str> = key.split('.').collect();
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut t = table;
    for p in path {
        match t.get(*p) {
            Some(toml::Value::Table(inner)) => t = inner,
            _ => return false,
        }
    }
    t.contains_key(*last)
}

impl RunConfig {
    /// Builds the configuration from an optional file plus overrides, which
    /// win over the file. Seeds not given per section follow `seed`.
    pub fn resolve(file: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<RunConfig> {
        let mut table = match file {
            Some(p) => {
                if !p.exists() {
                    return Err(Error::config(format!("config file {} does not exist", p.display())));
                }
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for (k, v) in overrides {
            set_key(&mut table, k, v.clone())?;
        }
        let explicit_train_seed = has_key(&table, "train.seed");
        let explicit_search_seed = has_key(&table, "score.search.seed");
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config(format!("config: {}", e.message())))?;
        if !explicit_train_seed {
            cfg.train.seed = cfg.seed;
        }
        if !explicit_search_seed {
            cfg.score.search.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.score.search.validate()?;
        self.score.metric_list()?;
        parse_metrics(&self.mnist.metrics)?;
        if self.score.n_samples == 0 {
            return Err(Error::config("score.n_samples must be at least 1"));
        }
        if self.eval.bins == 0 {
            return Err(Error::config("eval.bins must be at least 1"));
        }
        for (name, f) in [
            ("mnist.train_fraction", self.mnist.train_fraction),
            ("synthetic.train_fraction", self.synthetic.train_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0, 1)")));
            }
        }
        if self.mnist.digits.iter().any(|d| !(0..=9).contains(d)) {
            return Err(Error::config("mnist.digits must lie in 0..=9"));
        }
        Ok(())
    }

    /// The configuration as TOML, written next to every run's outputs.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(format!("config: {e}")))
    }
}

/// Command-line `key=value` strings as typed overrides.
pub fn overrides_from_assignments(assignments: &[String]) -> Result<Vec<(String, toml::Value)>> {
    let mut t = toml::Table::new();
    let mut out = Vec::new();
    for a in assignments {
        apply_override(&mut t, a)?;
        let (k, v) = a.split_once('=').expect("checked by apply_override");
        out.push((k.trim().to_string(), parse_value(v.trim())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_win_and_seeds_follow_the_global_seed() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "seed = 5\n[train]\nlr = 0.01\nmax_epochs = 3\n").unwrap();
        let o = overrides_from_assignments(&["train.max_epochs=7".into(), "score.metrics=[\"vae-reg\"]".into()]).unwrap();
        let cfg = RunConfig::resolve(Some(&path), &o).unwrap();
        assert_eq!(cfg.train.max_epochs, 7);
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.train.seed, 5);
        assert_eq!(cfg.score.search.seed, 5);
        assert_eq!(cfg.score.metric_list().unwrap(), vec![Metric::VaeReg]);
        let o = overrides_from_assignments(&["train.seed=9".into()]).unwrap();
        assert_eq!(RunConfig::resolve(Some(&path), &o).unwrap().train.seed, 9);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for bad in ["trian.lr=1", "train.lr=-1", "score.metrics=[\"nope\"]", "mnist.digits=[11]", "bogus=1"] {
            let o = overrides_from_assignments(&[bad.into()]).unwrap();
            let e = RunConfig::resolve(None, &o).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{bad}: {e}");
        }
        let e = RunConfig::resolve(None, &overrides_from_assignments(&["score.metrics=[\"nope\"]".into()]).unwrap())
            .unwrap_err();
        assert!(e.to_string().contains("latent-nn-bhatt"), "{e}");
        assert!(RunConfig::resolve(Some(Path::new("/nonexistent/run.toml")), &[]).is_err());
    }

    #[test]
    fn all_expands_without_duplicates() {
        let m = parse_metrics(&["vae-reg".into(), "all".into()]).unwrap();
        assert_eq!(m.len(), Metric::ALL.len());
        assert_eq!(m[0], Metric::VaeReg);
    }
}
