use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SplitSpec {
    /// Random split; whatever the two fractions leave over becomes the test part.
    Fractions { train: f64, validation: f64, seed: u64 },
    Explicit {
        train: Vec<usize>,
        validation: Vec<usize>,
        #[serde(default)]
        test: Vec<usize>,
    },
}

/// Disjoint index sets covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split(n: usize, spec: &SplitSpec) -> Result<Split> {
    match spec {
        SplitSpec::Fractions { train, validation, seed } => {
            let ok = |f: f64| f > 0.0 && f < 1.0;
            if !ok(*train) || !(ok(*validation) || *validation == 0.0) || train + validation > 1.0 + 1e-12 {
                return Err(Error::config(format!(
                    "split fractions must lie in (0, 1) and sum to at most 1, got {train} and {validation}"
                )));
            }
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            let n_train = ((train * n as f64).round() as usize).min(n);
            let n_val = ((validation * n as f64).round() as usize).min(n - n_train);
            let test = idx.split_off(n_train + n_val);
            let validation = idx.split_off(n_train);
            Ok(Split {
                train: idx,
                validation,
                test,
            })
        }
        SplitSpec::Explicit { train, validation, test } => {
            let mut seen = vec![false; n];
            for &i in train.iter().chain(validation).chain(test) {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::config(format!("split index {i} is out of range or repeated")));
                }
            }
            if let Some(i) = seen.iter().position(|s| !s) {
                return Err(Error::config(format!("split does not cover index {i}")));
            }
            Ok(Split {
                train: train.clone(),
                validation: validation.clone(),
                test: test.clone(),
            })
        }
    }
}

/// Normal training data and a labeled test set for one held-out digit.
#[derive(Debug, Clone)]
pub struct OneDigitOut {
    pub digit: i32,
    /// Training fraction of the non-`digit` samples.
    pub train: FeatureMatrix,
    /// Remaining normal samples (label 0) followed by every `digit` sample
    /// (label 1).
    pub test: FeatureMatrix,
    /// Original digit of every test row.
    pub test_digits: Vec<i32>,
}

pub fn one_digit_out(data: &FeatureMatrix, digit: i32, train_fraction: f64, seed: u64) -> Result<OneDigitOut> {
    let labels = data
        .labels()
        .ok_or_else(|| Error::data("one-digit-out split needs labeled data"))?;
    let normal: Vec<usize> = (0..data.n()).filter(|&i| labels[i] != digit).collect();
    let novel: Vec<usize> = (0..data.n()).filter(|&i| labels[i] == digit).collect();
    if novel.is_empty() || normal.is_empty() {
        return Err(Error::data(format!("digit {digit} leaves an empty normal or novel class")));
    }
    let s = split(
        normal.len(),
        &SplitSpec::Fractions {
            train: train_fraction,
            validation: 1.0 - train_fraction,
            seed,
        },
    )?;
    let train_idx: Vec<usize> = s.train.iter().map(|&k| normal[k]).collect();
    let mut test_idx: Vec<usize> = s.validation.iter().map(|&k| normal[k]).collect();
    let n_normal_test = test_idx.len();
    test_idx.extend_from_slice(&novel);
    let test_digits = test_idx.iter().map(|&i| labels[i]).collect();
    let train = data.select(&train_idx)?;
    let is_novel = (0..test_idx.len()).map(|k| i32::from(k >= n_normal_test)).collect();
    let test = data.select(&test_idx)?.with_labels(is_novel)?;
    Ok(OneDigitOut {
        digit,
        train,
        test,
        test_digits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eighty_twenty_on_ten() {
        let s = split(10, &SplitSpec::Fractions { train: 0.8, validation: 0.2, seed: 1 }).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (8, 2, 0));
        let mut all: Vec<usize> = s.train.iter().chain(&s.validation).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn same_seed_same_split() {
        let spec = SplitSpec::Fractions { train: 0.6, validation: 0.2, seed: 9 };
        assert_eq!(split(50, &spec).unwrap(), split(50, &spec).unwrap());
        let other = SplitSpec::Fractions { train: 0.6, validation: 0.2, seed: 10 };
        assert_ne!(split(50, &spec).unwrap(), split(50, &other).unwrap());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(split(10, &SplitSpec::Fractions { train: 1.2, validation: 0.1, seed: 0 }).is_err());
        assert!(split(10, &SplitSpec::Fractions { train: 0.7, validation: 0.5, seed: 0 }).is_err());
        let dup = SplitSpec::Explicit { train: vec![0, 1], validation: vec![1], test: vec![] };
        assert!(split(2, &dup).is_err());
        let gap = SplitSpec::Explicit { train: vec![0], validation: vec![], test: vec![] };
        assert!(split(2, &gap).is_err());
    }

    #[test]
    fn one_digit_out_keeps_every_novel_sample() {
        let labels: Vec<i32> = (0..100).map(|i| i % 10).collect();
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let data = FeatureMatrix::from_rows(&rows).unwrap().with_labels(labels).unwrap();
        let o = one_digit_out(&data, 1, 0.8, 3).unwrap();
        assert_eq!(o.train.n(), 72);
        assert!(o.train.labels().unwrap().iter().all(|&l| l != 1));
        assert_eq!(o.test_digits.iter().filter(|&&d| d == 1).count(), 10);
        assert_eq!(o.test.n(), 18 + 10);
        let flags = o.test.labels().unwrap();
        for (f, d) in flags.iter().zip(&o.test_digits) {
            assert_eq!(*f == 1, *d == 1);
        }
    }
}
