//! ROC analysis of novelty scores against binary labels (1 = novel).

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scores with their ground truth; `true` marks a novel sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    scores: Vec<f64>,
    labels: Vec<bool>,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Dimension {
                expected: scores.len(),
                actual: labels.len(),
            });
        }
        if let Some(i) = scores.iter().position(|s| s.is_nan()) {
            return Err(Error::data(format!("score {i} is NaN")));
        }
        Ok(LabeledScores { scores, labels })
    }

    /// Labels given as integers, where 1 is novel and 0 normal.
    pub fn from_int_labels(scores: Vec<f64>, labels: &[i32]) -> Result<Self> {
        let labels = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| match l {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::data(format!("label {i} is {l}, expected 0 or 1"))),
            })
            .collect::<Result<_>>()?;
        LabeledScores::new(scores, labels)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    /// `(normal, novel)` counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let novel = self.labels.iter().filter(|&&l| l).count();
        (self.len() - novel, novel)
    }

    fn require_both(&self) -> Result<(usize, usize)> {
        let (neg, pos) = self.class_counts();
        if neg == 0 || pos == 0 {
            return Err(Error::data(format!(
                "ROC analysis needs both classes, got {neg} normal and {pos} novel samples"
            )));
        }
        Ok((neg, pos))
    }

    /// Indices sorted by ascending score.
    fn order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[a].total_cmp(&self.scores[b]));
        idx
    }

    /// Runs of equal scores in ascending order as `(score, normal, novel)`.
    fn tie_groups(&self) -> Vec<(f64, u64, u64)> {
        let mut groups: Vec<(f64, u64, u64)> = Vec::new();
        for i in self.order() {
            let s = self.scores[i];
            match groups.last_mut() {
                Some(g) if g.0 == s => {}
                _ => groups.push((s, 0, 0)),
            }
            let g = groups.last_mut().unwrap();
            if self.labels[i] {
                g.2 += 1;
            } else {
                g.1 += 1;
            }
        }
        groups
    }
}

/// Twice the Mann-Whitney count: 2 per correctly ordered (novel, normal)
/// pair and 1 per tie.
pub fn auc_twice_count(ls: &LabeledScores) -> Result<u128> {
    ls.require_both()?;
    let mut below = 0u128;
    let mut twice = 0u128;
    for (_, neg, pos) in ls.tie_groups() {
        twice += pos as u128 * (2 * below + neg as u128);
        below += neg as u128;
    }
    Ok(twice)
}

/// Probability that a random novel sample outscores a random normal one,
/// ties counting one half.
pub fn auc(ls: &LabeledScores) -> Result<f64> {
    let (neg, pos) = ls.require_both()?;
    Ok(auc_twice_count(ls)? as f64 / (2 * neg as u128 * pos as u128) as f64)
}

/// Operating point when flagging every score `>= threshold` as novel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC points from `(0, 0)` at threshold `+inf` to `(1, 1)`, one per
/// distinct score.
pub fn roc_curve(ls: &LabeledScores) -> Result<Vec<RocPoint>> {
    let (neg, pos) = ls.require_both()?;
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut fp, mut tp) = (0u64, 0u64);
    for (s, n, p) in ls.tie_groups().into_iter().rev() {
        fp += n;
        tp += p;
        points.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: s,
        });
    }
    Ok(points)
}

/// Trapezoidal area under a ROC curve.
pub fn trapezoid_area(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) * 0.5)
        .sum()
}

/// Per-class score histograms over shared equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges spanning the observed score range.
    pub edges: Vec<f64>,
    /// Fraction of normal samples per bin.
    pub normal: Vec<f64>,
    /// Fraction of novel samples per bin.
    pub novel: Vec<f64>,
}

pub fn histogram(ls: &LabeledScores, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    let finite: Vec<f64> = ls.scores.iter().copied().filter(|s| s.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if finite.is_empty() { (0.0, 0.0) } else { (lo, hi) };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|k| if k == bins { hi } else { lo + k as f64 * width }).collect();
    let bin = |s: f64| -> usize {
        if width.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || s <= lo {
            0
        } else {
            (((s - lo) / width) as usize).min(bins - 1)
        }
    };
    let (mut normal, mut novel) = (vec![0.0; bins], vec![0.0; bins]);
    for (&s, &l) in ls.scores.iter().zip(&ls.labels) {
        let b = bin(s);
        if l {
            novel[b] += 1.0;
        } else {
            normal[b] += 1.0;
        }
    }
    let (neg, pos) = ls.class_counts();
    for (v, n) in [(&mut normal, neg), (&mut novel, pos)] {
        if n > 0 {
            v.iter_mut().for_each(|c| *c /= n as f64);
        }
    }
    Ok(Histogram { edges, normal, novel })
}

/// AUC, ROC points and histograms of one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub n_normal: usize,
    pub n_novel: usize,
    pub auc: f64,
    #[serde(skip)]
    pub roc: Vec<RocPoint>,
    pub histogram: Histogram,
}

pub const DEFAULT_BINS: usize = 50;

impl EvalReport {
    pub fn new(metric: impl Into<String>, ls: &LabeledScores, bins: usize) -> Result<Self> {
        let (n_normal, n_novel) = ls.require_both()?;
        Ok(EvalReport {
            metric: metric.into(),
            n_normal,
            n_novel,
            auc: auc(ls)?,
            roc: roc_curve(ls)?,
            histogram: histogram(ls, bins)?,
        })
    }

    /// `fpr, tpr, threshold` rows with a header line.
    pub fn roc_tsv(&self) -> String {
        let mut out = String::from("fpr\ttpr\tthreshold\n");
        for p in &self.roc {
            writeln!(out, "{}\t{}\t{}", p.fpr, p.tpr, p.threshold).unwrap();
        }
        out
    }
}

/// Reports of several metrics as one TOML document, one `[[metric]]` table
/// per entry.
pub fn reports_toml(reports: &[EvalReport]) -> Result<String> {
    #[derive(Serialize)]
    struct Doc<'a> {
        metric: &'a [EvalReport],
    }
    toml::to_string(&Doc { metric: reports }).map_err(|e| Error::config(format!("report: {e}")))
}

/// `metric, auc, n_normal, n_novel` rows.
pub fn auc_table_tsv(reports: &[EvalReport]) -> String {
    let mut out = String::from("metric\tauc\tn_normal\tn_novel\n");
    for r in reports {
        writeln!(out, "{}\t{}\t{}\t{}", r.metric, r.auc, r.n_normal, r.n_novel).unwrap();
    }
    out
}

/// One row of a scores table.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRow {
    pub sample_id: usize,
    pub metric: String,
    pub score: f64,
    pub label: Option<i32>,
}

const SCORES_HEADER: &str = "sample_id\tmetric\tscore\tlabel";

pub fn scores_tsv(rows: &[ScoreRow]) -> String {
    let mut out = format!("{SCORES_HEADER}\n");
    for r in rows {
        let label = r.label.map(|l| l.to_string()).unwrap_or_default();
        writeln!(out, "{}\t{}\t{}\t{}", r.sample_id, r.metric, r.score, label).unwrap();
    }
    out
}

pub fn parse_scores_tsv(text: &str) -> Result<Vec<ScoreRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(SCORES_HEADER) {
        return Err(Error::data(format!("scores table must start with the header {SCORES_HEADER:?}")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let bad = |what: &str| Error::data(format!("scores table line {}: bad {what}", i + 2));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad("field count"));
            }
            Ok(ScoreRow {
                sample_id: f[0].parse().map_err(|_| bad("sample_id"))?,
                metric: f[1].to_string(),
                score: f[2].parse().map_err(|_| bad("score"))?,
                label: match f[3].trim() {
                    "" => None,
                    l => Some(l.parse().map_err(|_| bad("label"))?),
                },
            })
        })
        .collect()
}

pub fn read_scores_tsv(path: impl AsRef<Path>) -> Result<Vec<ScoreRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_scores_tsv(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ls(normal: &[f64], novel: &[f64]) -> LabeledScores {
        let scores = normal.iter().chain(novel).copied().collect();
        let labels = normal.iter().map(|_| false).chain(novel.iter().map(|_| true)).collect();
        LabeledScores::new(scores, labels).unwrap()
    }

    fn pair_count(l: &LabeledScores) -> u128 {
        let mut c = 0;
        for (i, &li) in l.labels().iter().enumerate() {
            for (j, &lj) in l.labels().iter().enumerate() {
                if li && !lj {
                    let (a, b) = (l.scores()[i], l.scores()[j]);
                    c += if a > b { 2 } else if a == b { 1 } else { 0 };
                }
            }
        }
        c
    }

    #[test]
    fn analytic_cases() {
        assert_eq!(auc(&ls(&[0.0, 1.0], &[2.0, 3.0])).unwrap(), 1.0);
        assert_eq!(auc(&ls(&[5.0, 5.0, 5.0], &[5.0, 5.0])).unwrap(), 0.5);
        assert_eq!(auc(&ls(&[2.0, 3.0], &[0.0, 1.0])).unwrap(), 0.0);
        assert!(auc(&ls(&[1.0], &[])).is_err());
        assert!(LabeledScores::new(vec![f64::NAN], vec![true]).is_err());
        assert!(LabeledScores::from_int_labels(vec![1.0], &[2]).is_err());
    }

    #[test]
    fn perfect_separation_passes_through_the_corner() {
        let roc = roc_curve(&ls(&[0.0, 1.0], &[2.0, 3.0])).unwrap();
        assert!(roc.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(roc.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(roc.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
    }

    #[test]
    fn histogram_cases() {
        let h = histogram(&ls(&[3.0], &[]), 4).unwrap();
        assert_eq!(h.normal, vec![1.0, 0.0, 0.0, 0.0]);
        let h = histogram(&ls(&[0.5, 1.5, 2.5, 3.5], &[0.1, 3.9]), 4).unwrap();
        assert_eq!(h.normal, vec![0.25; 4]);
        assert_eq!(h.novel, vec![0.5, 0.0, 0.0, 0.5]);
        assert!(histogram(&ls(&[1.0], &[2.0]), 0).is_err());
    }

    #[test]
    fn scores_table_round_trips() {
        let rows = vec![
            ScoreRow {
                sample_id: 0,
                metric: "vae-reg".into(),
                score: 0.1 + 0.2,
                label: Some(1),
            },
            ScoreRow {
                sample_id: 1,
                metric: "vae-reg".into(),
                score: -1e-300,
                label: None,
            },
        ];
        assert_eq!(parse_scores_tsv(&scores_tsv(&rows)).unwrap(), rows);
        assert!(parse_scores_tsv("a\tb\n").is_err());
    }

    #[test]
    fn report_serializes() {
        let r = EvalReport::new("vae-reg", &ls(&[0.0, 1.0], &[0.5, 3.0]), 3).unwrap();
        let text = reports_toml(std::slice::from_ref(&r)).unwrap();
        assert!(text.contains("[[metric]]") && text.contains("auc = 0.75"), "{text}");
        assert_eq!(r.roc_tsv().lines().count(), 1 + r.roc.len());
    }

    fn labeled() -> impl Strategy<Value = LabeledScores> {
        (2usize..60).prop_flat_map(|n| {
            (
                proptest::collection::vec(0i32..8, n),
                proptest::collection::vec(any::<bool>(), n),
            )
                .prop_filter_map("both classes", |(s, l)| {
                    let ok = l.iter().any(|&v| v) && l.iter().any(|&v| !v);
                    ok.then(|| LabeledScores::new(s.into_iter().map(f64::from).collect(), l).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn matches_pair_counting_and_the_trapezoid(l in labeled()) {
            prop_assert_eq!(auc_twice_count(&l).unwrap(), pair_count(&l));
            let a = auc(&l).unwrap();
            prop_assert!((trapezoid_area(&roc_curve(&l).unwrap()) - a).abs() < 1e-12);
            let flipped = LabeledScores::new(l.scores().iter().map(|s| -s).collect(), l.labels().to_vec()).unwrap();
            prop_assert!((auc(&flipped).unwrap() + a - 1.0).abs() < 1e-15);
            let warped = LabeledScores::new(l.scores().iter().map(|s| (s * 0.3).exp()).collect(), l.labels().to_vec()).unwrap();
            prop_assert_eq!(auc(&warped).unwrap(), a);
            let roc = roc_curve(&l).unwrap();
            prop_assert!(roc.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
            let h = histogram(&l, 7).unwrap();
            let (neg, pos) = l.class_counts();
            for (v, n) in [(&h.normal, neg), (&h.novel, pos)] {
                prop_assert!(n == 0 || (v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
