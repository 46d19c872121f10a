//! Dataset ingestion, preprocessing, splits and synthetic fixtures.

mod idx;
mod matrix;
mod preprocess;
mod split;
mod synthetic;

pub use idx::{load_idx, load_idx_labels, load_mnist};
pub use matrix::{load_matrix, save_matrix};
pub use preprocess::{preprocess, preprocess_sources, PreprocessStats};
pub use split::{one_digit_out, split, OneDigitOut, Split, SplitSpec};
pub use synthetic::{make_synthetic, SyntheticConfig};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// `n` samples of `d` features stored row-major in `f32`, with optional
/// integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    values: Vec<f32>,
    labels: Option<Vec<i32>>,
    feature_names: Option<Vec<String>>,
    /// Source file and the processing steps applied so far.
    pub provenance: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, values: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::Empty("feature matrix"));
        }
        if values.len() != n * d {
            return Err(Error::data(format!(
                "{n} x {d} matrix needs {} values, got {}",
                n * d,
                values.len()
            )));
        }
        check_finite(&values, d)?;
        Ok(FeatureMatrix {
            n,
            d,
            values,
            labels: None,
            feature_names: None,
            provenance: Vec::new(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::data(format!("row {r} has {} features, expected {d}", rows[r].len())));
        }
        let values = rows.iter().flatten().map(|&v| v as f32).collect();
        FeatureMatrix::new(rows.len(), d, values)
    }

    pub fn with_labels(mut self, labels: Vec<i32>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::data(format!("{} labels for {} samples", labels.len(), self.n)));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_feature_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d {
            return Err(Error::data(format!("{} feature names for {} features", names.len(), self.d)));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn labels(&self) -> Option<&[i32]> {
        self.labels.as_deref()
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    /// Rows `idx` in the given order, keeping labels and names.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Empty("row selection"));
        }
        let mut values = Vec::with_capacity(idx.len() * self.d);
        for &i in idx {
            if i >= self.n {
                return Err(Error::data(format!("row index {i} out of range for {} rows", self.n)));
            }
            values.extend_from_slice(self.row(i));
        }
        Ok(FeatureMatrix {
            n: idx.len(),
            d: self.d,
            values,
            labels: self.labels.as_ref().map(|l| idx.iter().map(|&i| l[i]).collect()),
            feature_names: self.feature_names.clone(),
            provenance: self.provenance.clone(),
        })
    }

    /// Row-wise concatenation; labels survive only if every part has them.
    pub fn concat(parts: &[&FeatureMatrix]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("matrix list"))?;
        let mut values = Vec::new();
        let mut labels = Some(Vec::new());
        for p in parts {
            if p.d != first.d {
                return Err(Error::Dimension {
                    expected: first.d,
                    actual: p.d,
                });
            }
            values.extend_from_slice(&p.values);
            match (&mut labels, &p.labels) {
                (Some(acc), Some(l)) => acc.extend_from_slice(l),
                _ => labels = None,
            }
        }
        Ok(FeatureMatrix {
            n: values.len() / first.d,
            d: first.d,
            values,
            labels,
            feature_names: first.feature_names.clone(),
            provenance: first.provenance.clone(),
        })
    }

    /// `[n, d]` tensor in `f64`.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n, self.d], self.values.iter().map(|&v| v as f64).collect())
            .expect("matrix shape is consistent")
    }

    pub(crate) fn map_values(&mut self, f: impl Fn(usize, f64) -> f64) {
        let d = self.d;
        for (k, v) in self.values.iter_mut().enumerate() {
            *v = f(k % d, *v as f64) as f32;
        }
    }
}

fn check_finite(values: &[f32], d: usize) -> Result<()> {
    let bad: Vec<String> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_finite())
        .take(5)
        .map(|(k, _)| format!("({}, {})", k / d, k % d))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::data(format!("non-finite values at (row, feature) {}", bad.join(", "))))
    }
}
