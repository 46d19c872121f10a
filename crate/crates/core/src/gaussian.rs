//! Diagonal Gaussians and uniform mixtures of them.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Log-variances produced by a network head are clamped to this range.
pub const LOG_VAR_MIN: f64 = -20.0;
pub const LOG_VAR_MAX: f64 = 20.0;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `N(mean, diag(exp(log_var)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), log_var.len())?;
        if mean.is_empty() {
            return Err(Error::Empty("gaussian"));
        }
        if let Some(j) = log_var.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("log-variance {j} is not finite")));
        }
        Ok(DiagonalGaussian { mean, log_var })
    }

    /// The unit Gaussian prior `N(0, I)`.
    pub fn standard(dim: usize) -> Self {
        DiagonalGaussian {
            mean: vec![0.0; dim],
            log_var: vec![0.0; dim],
        }
    }

    /// Splits a `[mean | log_var]` head output, clamping the log-variances.
    pub fn from_head(head: &[f64]) -> Self {
        let d = head.len() / 2;
        DiagonalGaussian {
            mean: head[..d].to_vec(),
            log_var: head[d..2 * d]
                .iter()
                .map(|v| v.clamp(LOG_VAR_MIN, LOG_VAR_MAX))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.log_density_unchecked(x))
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for ((&xi, &m), &lv) in x.iter().zip(&self.mean).zip(&self.log_var) {
            let d = xi - m;
            acc += LN_2PI + lv + d * d * (-lv).exp();
        }
        -0.5 * acc
    }

    /// Reparameterized draw `mean + exp(log_var / 2) * eps`.
    pub fn sample_with(&self, eps: &[f64]) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_var)
            .zip(eps)
            .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let eps = standard_normals(rng, self.dim());
        self.sample_with(&eps)
    }

    /// `KL(self || N(0, I))`, the VAE regularizer.
    pub fn kl_to_standard_normal(&self) -> f64 {
        0.5 * self
            .mean
            .iter()
            .zip(&self.log_var)
            .map(|(m, lv)| lv.exp() + m * m - 1.0 - lv)
            .sum::<f64>()
    }

    /// Standard deviations `exp(log_var / 2)`.
    pub fn std_dev(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }

    /// Closed-form Bhattacharyya distance between diagonal Gaussians.
    ///
    /// Every operation is symmetric in its arguments, so `D(p, q) == D(q, p)`
    /// holds exactly in floating point, and `D(p, p)` is exactly zero.
    pub fn bhattacharyya(&self, other: &DiagonalGaussian) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(bhattacharyya_terms(&self.mean, &self.std_dev(), &other.mean, &other.std_dev()))
    }
}

/// Logarithms of per-dimension factors are taken once per this many of them.
pub(crate) const LOG_CHUNK: usize = 8;

/// `1/8 sum (mp - mq)^2 / v + 1/2 sum ln(v / (sp sq))` with `v = (sp^2 + sq^2) / 2`.
///
/// Each ratio `v / (sp sq)` is `1 + (sp - sq)^2 / (2 sp sq)`. The excess over
/// one of the running product is tracked directly and fed to `ln_1p`, so
/// nearly equal variances keep full relative precision. The
/// nearest-neighbour scans replay exactly this operation order.
pub(crate) fn bhattacharyya_terms(mp: &[f64], sp: &[f64], mq: &[f64], sq: &[f64]) -> f64 {
    let (mut quad, mut logs, mut excess) = (0.0, 0.0, 0.0);
    for j in 0..mp.len() {
        let dm = mp[j] - mq[j];
        let avg = (sp[j] * sp[j] + sq[j] * sq[j]) * 0.5;
        quad += dm * dm / avg;
        let ds = sp[j] - sq[j];
        let e = ds * ds / (2.0 * (sp[j] * sq[j]));
        excess = excess + e + excess * e;
        if (j + 1) % LOG_CHUNK == 0 {
            logs += excess.ln_1p();
            excess = 0.0;
        }
    }
    if !mp.len().is_multiple_of(LOG_CHUNK) {
        logs += excess.ln_1p();
    }
    0.125 * quad + 0.5 * logs
}

pub(crate) fn standard_normals<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `log(mean(exp(values)))` without overflow.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let s: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + (s / values.len() as f64).ln()
}

/// Uniform-weight mixture of diagonal Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<DiagonalGaussian>,
}

impl GaussianMixture {
    pub fn new(components: Vec<DiagonalGaussian>) -> Result<Self> {
        let first = components.first().ok_or(Error::Empty("mixture"))?;
        for c in &components {
            check_dim(first.dim(), c.dim())?;
        }
        Ok(GaussianMixture { components })
    }

    pub fn components(&self) -> &[DiagonalGaussian] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        let logs: Vec<f64> = self.components.iter().map(|c| c.log_density_unchecked(x)).collect();
        Ok(log_mean_exp(&logs))
    }

    pub fn density(&self, x: &[f64]) -> Result<f64> {
        Ok(self.log_density(x)?.exp())
    }
}

/// Density of `N(mean, var)` at `x`, one dimension.
pub(crate) fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}
