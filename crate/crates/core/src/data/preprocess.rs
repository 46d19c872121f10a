use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{check_dim, Error, Result};

/// Training-set statistics of the two-stage intensity normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    /// Global mean of each training source before scaling.
    pub source_means: Vec<f64>,
    /// Per-feature means of the source-normalized training data.
    pub channel_means: Vec<f64>,
    /// Provenance of the fitted statistics.
    pub fitted_on: Vec<String>,
}

/// [`preprocess_sources`] for a single source.
pub fn preprocess(data: &FeatureMatrix, stats: Option<&PreprocessStats>) -> Result<(FeatureMatrix, PreprocessStats)> {
    preprocess_sources(&[data], stats)
}

/// Divides every source by its own global mean, then every feature by its
/// channel mean. Channel means are fitted on `sources` unless `stats` is
/// given, in which case they are reused verbatim.
pub fn preprocess_sources(
    sources: &[&FeatureMatrix],
    stats: Option<&PreprocessStats>,
) -> Result<(FeatureMatrix, PreprocessStats)> {
    let mut scaled = Vec::with_capacity(sources.len());
    let mut source_means = Vec::with_capacity(sources.len());
    for (s, m) in sources.iter().enumerate() {
        let mean = m.values().iter().map(|&v| v as f64).sum::<f64>() / m.values().len() as f64;
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::Preprocess(format!("source {s} has global mean {mean}, cannot divide by it")));
        }
        let mut m = (*m).clone();
        m.map_values(|_, v| v / mean);
        source_means.push(mean);
        scaled.push(m);
    }
    let mut all = FeatureMatrix::concat(&scaled.iter().collect::<Vec<_>>())?;
    let stats = match stats {
        Some(s) => {
            check_dim(all.d(), s.channel_means.len())?;
            s.clone()
        }
        None => {
            let d = all.d();
            let mut sums = vec![0.0f64; d];
            for (k, &v) in all.values().iter().enumerate() {
                sums[k % d] += v as f64;
            }
            let channel_means: Vec<f64> = sums.iter().map(|s| s / all.n() as f64).collect();
            PreprocessStats {
                source_means: source_means.clone(),
                channel_means,
                fitted_on: sources.iter().flat_map(|m| m.provenance.iter().cloned()).collect(),
            }
        }
    };
    if let Some(j) = stats.channel_means.iter().position(|&m| !(m > 0.0 && m.is_finite())) {
        let name = all.feature_names().map_or(format!("feature {j}"), |n| format!("feature {j} ({})", n[j]));
        return Err(Error::Preprocess(format!(
            "{name} has channel mean {}, cannot divide by it",
            stats.channel_means[j]
        )));
    }
    all.map_values(|j, v| v / stats.channel_means[j]);
    all.provenance.push("preprocessed: source mean, channel mean".into());
    Ok((all, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> FeatureMatrix {
        FeatureMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn global_mean(m: &FeatureMatrix) -> f64 {
        m.values().iter().map(|&v| v as f64).sum::<f64>() / m.values().len() as f64
    }

    #[test]
    fn training_output_has_unit_global_and_channel_means() {
        let data = m(&[&[1.0, 10.0, 3.0], &[2.0, 30.0, 5.0], &[4.0, 20.0, 1.0]]);
        let (out, stats) = preprocess(&data, None).unwrap();
        assert!((global_mean(&out) - 1.0).abs() < 1e-6);
        for j in 0..3 {
            let cm: f64 = (0..3).map(|i| out.row(i)[j] as f64).sum::<f64>() / 3.0;
            assert!((cm - 1.0).abs() < 1e-6);
        }
        assert_eq!(stats.source_means.len(), 1);
    }

    #[test]
    fn stored_stats_reproduce_training_output() {
        let data = m(&[&[1.0, 10.0], &[2.0, 30.0], &[4.0, 20.0]]);
        let (a, stats) = preprocess(&data, None).unwrap();
        let (b, reused) = preprocess(&data, Some(&stats)).unwrap();
        assert_eq!(reused, stats);
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-7);
        }
    }

    #[test]
    fn constant_feature_becomes_ones() {
        let data = m(&[&[3.0, 1.0], &[3.0, 2.0], &[3.0, 7.0]]);
        let (out, _) = preprocess(&data, None).unwrap();
        for i in 0..3 {
            assert!((out.row(i)[0] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn non_positive_means_name_the_feature() {
        let data = m(&[&[1.0, 0.0], &[2.0, 0.0]]);
        let err = preprocess(&data, None).unwrap_err().to_string();
        assert!(err.contains("feature 1"), "{err}");
        let neg = m(&[&[-1.0, -2.0]]);
        assert!(preprocess(&neg, None).is_err());
    }

    #[test]
    fn sources_are_normalized_separately() {
        let a = m(&[&[1.0, 3.0]]);
        let b = m(&[&[10.0, 30.0]]);
        let (out, stats) = preprocess_sources(&[&a, &b], None).unwrap();
        assert_eq!(stats.source_means, vec![2.0, 20.0]);
        assert_eq!(out.row(0), out.row(1));
    }
}
