//! Variational autoencoder: architectures, encode/decode, ELBO gradients,
//! training with early stopping and checkpoints.

mod arch;
mod checkpoint;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use arch::{builtin_architecture, Architecture, CATALOG, MNIST_LATENT};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use train::{train, train_observed, train_with_validation, EpochRecord, TrainConfig, TrainLog};

use crate::data::PreprocessStats;
use crate::error::{check_dim, Error, Result};
use crate::gaussian::{standard_normals, DiagonalGaussian, LOG_CHUNK, LOG_VAR_MAX, LOG_VAR_MIN};
use crate::nn::{sigmoid, Network, ParameterStore, Tensor};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Rows per forward call when evaluating many inputs.
const EVAL_CHUNK: usize = 64;

/// Output distribution of the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecoderFamily {
    /// Diagonal Gaussian; the head is `[mean | log_var]`.
    #[default]
    Gaussian,
    /// Independent Bernoulli features; the head holds logits. Inputs in
    /// `[0, 1]` are scored with the cross-entropy form `x ln p + (1 - x) ln (1 - p)`.
    Bernoulli,
}

impl DecoderFamily {
    /// Head width for inputs with `features` values.
    pub fn head_len(self, features: usize) -> usize {
        match self {
            DecoderFamily::Gaussian => 2 * features,
            DecoderFamily::Bernoulli => features,
        }
    }

    /// Noise consumed by one decoder sample of `dim` features: standard
    /// normals for the Gaussian family, uniforms on `[0, 1)` for Bernoulli.
    pub fn draw_noise<R: Rng + ?Sized>(self, dim: usize, rng: &mut R) -> Vec<f64> {
        match self {
            DecoderFamily::Gaussian => standard_normals(rng, dim),
            DecoderFamily::Bernoulli => (0..dim).map(|_| rng.random::<f64>()).collect(),
        }
    }
}

impl fmt::Display for DecoderFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderFamily::Gaussian => "gaussian",
            DecoderFamily::Bernoulli => "bernoulli",
        })
    }
}

impl FromStr for DecoderFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(DecoderFamily::Gaussian),
            "bernoulli" => Ok(DecoderFamily::Bernoulli),
            _ => Err(Error::config(format!("unknown decoder family {s:?} (gaussian, bernoulli)"))),
        }
    }
}

/// `p(x|z)` for one latent point.
#[derive(Debug, Clone, PartialEq)]
pub enum DecoderDist {
    Gaussian(DiagonalGaussian),
    Bernoulli { logits: Vec<f64> },
}

#[inline]
fn softplus(l: f64) -> f64 {
    l.max(0.0) + (-l.abs()).exp().ln_1p()
}

impl DecoderDist {
    pub fn from_head(family: DecoderFamily, head: &[f64]) -> Self {
        match family {
            DecoderFamily::Gaussian => DecoderDist::Gaussian(DiagonalGaussian::from_head(head)),
            DecoderFamily::Bernoulli => DecoderDist::Bernoulli { logits: head.to_vec() },
        }
    }

    pub fn family(&self) -> DecoderFamily {
        match self {
            DecoderDist::Gaussian(_) => DecoderFamily::Gaussian,
            DecoderDist::Bernoulli { .. } => DecoderFamily::Bernoulli,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DecoderDist::Gaussian(g) => g.dim(),
            DecoderDist::Bernoulli { logits } => logits.len(),
        }
    }

    /// `E[p(x|z)]`.
    pub fn mean(&self) -> Vec<f64> {
        match self {
            DecoderDist::Gaussian(g) => g.mean().to_vec(),
            DecoderDist::Bernoulli { logits } => logits.iter().map(|&l| sigmoid(l)).collect(),
        }
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim(), x.len())?;
        Ok(self.log_density_unchecked(x))
    }

    pub(crate) fn log_density_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            DecoderDist::Gaussian(g) => g.log_density_unchecked(x),
            DecoderDist::Bernoulli { logits } => logits.iter().zip(x).map(|(&l, &xi)| xi * l - softplus(l)).sum(),
        }
    }

    /// Sample driven by noise from [`DecoderFamily::draw_noise`].
    pub fn sample_with(&self, noise: &[f64]) -> Vec<f64> {
        match self {
            DecoderDist::Gaussian(g) => g.sample_with(noise),
            DecoderDist::Bernoulli { logits } => logits
                .iter()
                .zip(noise)
                .map(|(&l, &u)| if u < sigmoid(l) { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let noise = self.family().draw_noise(self.dim(), rng);
        self.sample_with(&noise)
    }

    /// Bhattacharyya distance; for Bernoulli features
    /// `-sum ln(sqrt(p q) + sqrt((1 - p)(1 - q)))`.
    pub fn bhattacharyya(&self, other: &DecoderDist) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        match (self, other) {
            (DecoderDist::Gaussian(p), DecoderDist::Gaussian(q)) => p.bhattacharyya(q),
            (DecoderDist::Bernoulli { .. }, DecoderDist::Bernoulli { .. }) => {
                Ok(bernoulli_bhattacharyya(&self.mean(), &other.mean()))
            }
            _ => Err(Error::config("Bhattacharyya distance between different decoder families")),
        }
    }
}

/// Bernoulli Bhattacharyya distance from success probabilities, with one
/// logarithm per [`LOG_CHUNK`] coefficients. Each coefficient is written as
/// `1 - h` with `h = ((sqrt p - sqrt q)^2 + (sqrt(1 - p) - sqrt(1 - q))^2) / 2`
/// and the product's shortfall below one is tracked directly. The
/// nearest-neighbour scans replay exactly this operation order.
pub(crate) fn bernoulli_bhattacharyya(p: &[f64], q: &[f64]) -> f64 {
    let (mut logs, mut short) = (0.0, 0.0);
    for j in 0..p.len() {
        let h = bernoulli_hellinger(p[j], q[j]);
        short = short + h - short * h;
        if (j + 1) % LOG_CHUNK == 0 {
            logs += (-short).ln_1p();
            short = 0.0;
        }
    }
    if !p.len().is_multiple_of(LOG_CHUNK) {
        logs += (-short).ln_1p();
    }
    -logs
}

/// `1 - sqrt(p q) - sqrt((1 - p)(1 - q))`, computed without cancellation.
#[inline]
pub(crate) fn bernoulli_hellinger(p: f64, q: f64) -> f64 {
    let a = p.sqrt() - q.sqrt();
    let b = (1.0 - p).sqrt() - (1.0 - q).sqrt();
    (a * a + b * b) * 0.5
}

/// `-ln p(x | head)`, adding `scale` times its gradient with respect to the
/// raw head into `grad`. Clamped log-variances receive no gradient.
pub(crate) fn nll_head_grad(family: DecoderFamily, head: &[f64], x: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
    let d = x.len();
    let mut nll = 0.0;
    match family {
        DecoderFamily::Gaussian => {
            for j in 0..d {
                let (m, r) = (head[j], head[d + j]);
                let s = r.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
                let diff = x[j] - m;
                let w = (-s).exp();
                let q = diff * diff * w;
                nll += LN_2PI + s + q;
                grad[j] -= scale * diff * w;
                if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&r) {
                    grad[d + j] += scale * 0.5 * (1.0 - q);
                }
            }
            nll *= 0.5;
        }
        DecoderFamily::Bernoulli => {
            for j in 0..d {
                let l = head[j];
                nll += softplus(l) - x[j] * l;
                grad[j] += scale * (sigmoid(l) - x[j]);
            }
        }
    }
    nll
}

/// A VAE with its parameters and the preprocessing it was trained under.
#[derive(Debug, Clone)]
pub struct VaeModel {
    arch: Architecture,
    family: DecoderFamily,
    encoder: Network,
    decoder: Network,
    encoder_params: ParameterStore,
    decoder_params: ParameterStore,
    seed: u64,
    preprocess: Option<PreprocessStats>,
}

impl PartialEq for VaeModel {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.family == other.family
            && self.encoder_params == other.encoder_params
            && self.decoder_params == other.decoder_params
            && self.seed == other.seed
            && self.preprocess == other.preprocess
    }
}

impl VaeModel {
    /// Freshly initialized model; the seed fixes the initial weights.
    pub fn new(arch: Architecture, family: DecoderFamily, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        let (encoder, decoder) = arch.networks(family)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let encoder_params = encoder.init_params(&mut rng);
        let decoder_params = decoder.init_params(&mut rng);
        Ok(VaeModel {
            arch,
            family,
            encoder,
            decoder,
            encoder_params,
            decoder_params,
            seed,
            preprocess: None,
        })
    }

    pub fn from_parts(
        arch: Architecture,
        family: DecoderFamily,
        encoder_params: ParameterStore,
        decoder_params: ParameterStore,
        seed: u64,
        preprocess: Option<PreprocessStats>,
    ) -> Result<Self> {
        let (encoder, decoder) = arch.networks(family)?;
        encoder.check_params(&encoder_params)?;
        decoder.check_params(&decoder_params)?;
        Ok(VaeModel {
            arch,
            family,
            encoder,
            decoder,
            encoder_params,
            decoder_params,
            seed,
            preprocess,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn family(&self) -> DecoderFamily {
        self.family
    }

    pub fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    pub fn input_len(&self) -> usize {
        self.arch.input_len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn encoder_network(&self) -> &Network {
        &self.encoder
    }

    pub fn decoder_network(&self) -> &Network {
        &self.decoder
    }

    pub fn encoder_params(&self) -> &ParameterStore {
        &self.encoder_params
    }

    pub fn decoder_params(&self) -> &ParameterStore {
        &self.decoder_params
    }

    pub fn encoder_params_mut(&mut self) -> &mut ParameterStore {
        &mut self.encoder_params
    }

    pub fn decoder_params_mut(&mut self) -> &mut ParameterStore {
        &mut self.decoder_params
    }

    pub fn preprocess(&self) -> Option<&PreprocessStats> {
        self.preprocess.as_ref()
    }

    pub fn set_preprocess(&mut self, stats: Option<PreprocessStats>) {
        self.preprocess = stats;
    }

    fn rows_tensor(rows: &[f64], width: usize) -> Tensor {
        Tensor::new(vec![rows.len() / width, width], rows.to_vec()).expect("row-major block")
    }

    /// Raw encoder heads `[mean | log_var]` for row-major inputs.
    pub(crate) fn encoder_heads(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let d = self.input_len();
        let out: Vec<Vec<f64>> = rows
            .par_chunks(EVAL_CHUNK * d)
            .map(|c| {
                self.encoder
                    .forward(&self.encoder_params, &Self::rows_tensor(c, d))
                    .map(Tensor::into_data)
            })
            .collect::<Result<_>>()?;
        Ok(out.concat())
    }

    /// Raw decoder heads for row-major latent points.
    pub(crate) fn decoder_heads(&self, zs: &[f64]) -> Result<Vec<f64>> {
        let l = self.latent_dim();
        let out: Vec<Vec<f64>> = zs
            .par_chunks(EVAL_CHUNK * l)
            .map(|c| {
                self.decoder
                    .forward(&self.decoder_params, &Self::rows_tensor(c, l))
                    .map(Tensor::into_data)
            })
            .collect::<Result<_>>()?;
        Ok(out.concat())
    }

    /// `q(z|x)`.
    pub fn encode(&self, x: &[f64]) -> Result<DiagonalGaussian> {
        check_dim(self.input_len(), x.len())?;
        Ok(DiagonalGaussian::from_head(&self.encoder_heads(x)?))
    }

    /// `q(z|x)` for every row of `[n, ...]` inputs.
    pub fn encode_batch(&self, xs: &Tensor) -> Result<Vec<DiagonalGaussian>> {
        check_dim(self.input_len(), xs.sample_len())?;
        let heads = self.encoder_heads(xs.data())?;
        Ok(heads.chunks(2 * self.latent_dim()).map(DiagonalGaussian::from_head).collect())
    }

    /// `p(x|z)`.
    pub fn decode(&self, z: &[f64]) -> Result<DecoderDist> {
        check_dim(self.latent_dim(), z.len())?;
        Ok(DecoderDist::from_head(self.family, &self.decoder_heads(z)?))
    }

    /// `p(x|z)` for every row of `[n, latent_dim]` points.
    pub fn decode_batch(&self, zs: &Tensor) -> Result<Vec<DecoderDist>> {
        check_dim(self.latent_dim(), zs.sample_len())?;
        let heads = self.decoder_heads(zs.data())?;
        let width = self.family.head_len(self.input_len());
        Ok(heads.chunks(width).map(|h| DecoderDist::from_head(self.family, h)).collect())
    }

    /// Decoder distribution at the encoder mean, `p(x | E[q(z|x)])`.
    pub fn reconstruct(&self, x: &[f64]) -> Result<DecoderDist> {
        self.decode(self.encode(x)?.mean())
    }

    /// Monte Carlo reconstruction log-likelihood `mean_i ln p(x | z_i)` with
    /// `z_i ~ q(z|x)`, and `KL(q(z|x) || N(0, I))`.
    pub fn elbo_terms<R: Rng + ?Sized>(&self, x: &[f64], n_samples: usize, rng: &mut R) -> Result<(f64, f64)> {
        if n_samples == 0 {
            return Err(Error::config("n_samples must be at least 1"));
        }
        let q = self.encode(x)?;
        let zs: Vec<f64> = (0..n_samples)
            .flat_map(|_| q.sample_with(&standard_normals(rng, q.dim())))
            .collect();
        let heads = self.decoder_heads(&zs)?;
        let width = self.family.head_len(self.input_len());
        let recon = heads
            .chunks(width)
            .map(|h| DecoderDist::from_head(self.family, h).log_density_unchecked(x))
            .sum::<f64>()
            / n_samples as f64;
        Ok((recon, q.kl_to_standard_normal()))
    }

    /// Value of `objective(head)` at `p(x|z)` together with its gradient with
    /// respect to `z`. `objective` returns the value and its gradient with
    /// respect to the raw decoder head.
    pub fn decoder_pullback(
        &self,
        z: &[f64],
        objective: impl FnOnce(&[f64]) -> (f64, Vec<f64>),
    ) -> Result<(f64, Vec<f64>)> {
        check_dim(self.latent_dim(), z.len())?;
        let trace = self
            .decoder
            .forward_trace(&self.decoder_params, &Self::rows_tensor(z, z.len()))?;
        let (value, head_grad) = objective(trace.output().data());
        let g = Tensor::new(trace.output().shape().to_vec(), head_grad)?;
        let (_, dz) = self.decoder.backward_trace(&self.decoder_params, &trace, &g, false, true)?;
        Ok((value, dz.expect("input gradient requested").into_data()))
    }

    /// Summed negative ELBO of `n` row-major inputs with frozen encoder noise
    /// `eps` (`n * mc * latent_dim` normals, sample-major), and optionally the
    /// parameter gradients of that sum.
    pub(crate) fn loss_and_grad(
        &self,
        x: &[f64],
        eps: &[f64],
        mc: usize,
        want_grad: bool,
    ) -> Result<(f64, Option<(ParameterStore, ParameterStore)>)> {
        let (d, l) = (self.input_len(), self.latent_dim());
        let n = x.len() / d;
        let head_len = self.family.head_len(d);
        let enc_trace = self.encoder.forward_trace(&self.encoder_params, &Self::rows_tensor(x, d))?;
        let heads = enc_trace.output().data();
        let mut zs = Vec::with_capacity(n * mc * l);
        let mut loss = 0.0;
        for i in 0..n {
            let q = DiagonalGaussian::from_head(&heads[i * 2 * l..(i + 1) * 2 * l]);
            loss += q.kl_to_standard_normal();
            for s in 0..mc {
                let e = &eps[(i * mc + s) * l..(i * mc + s + 1) * l];
                zs.extend(q.sample_with(e));
            }
        }
        let dec_trace = self.decoder.forward_trace(&self.decoder_params, &Self::rows_tensor(&zs, l))?;
        let out = dec_trace.output().data();
        let mut head_grad = vec![0.0; n * mc * head_len];
        let scale = 1.0 / mc as f64;
        for i in 0..n {
            let xi = &x[i * d..(i + 1) * d];
            for s in 0..mc {
                let k = i * mc + s;
                let r = k * head_len..(k + 1) * head_len;
                loss += scale * nll_head_grad(self.family, &out[r.clone()], xi, scale, &mut head_grad[r]);
            }
        }
        if !want_grad {
            return Ok((loss, None));
        }
        let g = Tensor::new(dec_trace.output().shape().to_vec(), head_grad)?;
        let (dec_grads, dz) = self
            .decoder
            .backward_trace(&self.decoder_params, &dec_trace, &g, true, true)?;
        let dz = dz.expect("input gradient requested").into_data();
        let mut enc_head_grad = vec![0.0; n * 2 * l];
        for i in 0..n {
            let h = &heads[i * 2 * l..(i + 1) * 2 * l];
            let gh = &mut enc_head_grad[i * 2 * l..(i + 1) * 2 * l];
            for j in 0..l {
                let (mu, r) = (h[j], h[l + j]);
                let lv = r.clamp(LOG_VAR_MIN, LOG_VAR_MAX);
                let sd = (0.5 * lv).exp();
                let (mut g_mu, mut g_lv) = (mu, 0.5 * (lv.exp() - 1.0));
                for s in 0..mc {
                    let k = (i * mc + s) * l + j;
                    g_mu += dz[k];
                    g_lv += dz[k] * eps[k] * 0.5 * sd;
                }
                gh[j] = g_mu;
                if (LOG_VAR_MIN..=LOG_VAR_MAX).contains(&r) {
                    gh[l + j] = g_lv;
                }
            }
        }
        let g = Tensor::new(enc_trace.output().shape().to_vec(), enc_head_grad)?;
        let (enc_grads, _) = self
            .encoder
            .backward_trace(&self.encoder_params, &enc_trace, &g, true, false)?;
        Ok((loss, Some((enc_grads.unwrap(), dec_grads.unwrap()))))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn toy(family: DecoderFamily, seed: u64) -> VaeModel {
        let arch = builtin_architecture("dense:5-4-2", family).unwrap();
        VaeModel::new(arch, family, seed).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_give_bias_heads() {
        let mut m = toy(DecoderFamily::Gaussian, 1);
        let enc = m.encoder_params_mut();
        for t in enc.tensors_mut() {
            t.fill(0.0);
        }
        let nt = enc.len();
        enc.tensors_mut()[nt - 1].data_mut().copy_from_slice(&[0.5, -1.0, 0.25, 2.0]);
        let q = m.encode(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(q.mean(), &[0.5, -1.0]);
        assert_eq!(q.log_var(), &[0.25, 2.0]);
        let dec = m.decoder_params_mut();
        for t in dec.tensors_mut() {
            t.fill(0.0);
        }
        let nt = dec.len();
        dec.tensors_mut()[nt - 1].data_mut().iter_mut().enumerate().for_each(|(k, v)| *v = k as f64 * 0.1);
        let p = m.decode(&[3.0, -3.0]).unwrap();
        assert_eq!(p.mean().len(), 5);
        assert!((p.mean()[4] - 0.4).abs() < 1e-15);
        assert!(m.encode(&[1.0]).is_err());
        assert!(m.decode(&[1.0]).is_err());
    }

    #[test]
    fn batch_and_single_encodes_agree() {
        let m = toy(DecoderFamily::Gaussian, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rows: Vec<f64> = rand_vec(&mut rng, 5 * 150);
        let batch = m.encode_batch(&Tensor::new(vec![150, 5], rows.clone()).unwrap()).unwrap();
        for (i, q) in batch.iter().enumerate() {
            assert_eq!(q, &m.encode(&rows[i * 5..(i + 1) * 5]).unwrap());
        }
    }

    #[test]
    fn kl_term_is_the_encoder_kl() {
        let m = toy(DecoderFamily::Gaussian, 3);
        let x = [0.1, 0.2, -0.3, 0.4, 0.0];
        let mut a = ChaCha8Rng::seed_from_u64(4);
        let mut b = ChaCha8Rng::seed_from_u64(4);
        let (r1, kl) = m.elbo_terms(&x, 1, &mut a).unwrap();
        assert_eq!(kl, m.encode(&x).unwrap().kl_to_standard_normal());
        assert_eq!(m.elbo_terms(&x, 1, &mut b).unwrap(), (r1, kl));
    }

    #[test]
    fn recon_term_converges_with_samples() {
        let m = toy(DecoderFamily::Gaussian, 5);
        let x = [0.3, -0.2, 0.1, 0.0, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (big, _) = m.elbo_terms(&x, 10_000, &mut rng).unwrap();
        let small: Vec<f64> = (0..200).map(|_| m.elbo_terms(&x, 10, &mut rng).unwrap().0).collect();
        let mean = small.iter().sum::<f64>() / small.len() as f64;
        let sd = (small.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
        for s in &small[..10] {
            assert!((s - big).abs() < 5.0 * sd + 1e-9, "{s} vs {big} (sd {sd})");
        }
        assert!((mean - big).abs() < 4.0 * sd / (200f64).sqrt() + 3.0 * sd / 100.0);
    }

    /// Central differences of the frozen-noise loss against the analytic
    /// reparameterized gradient.
    fn check_elbo_gradient(family: DecoderFamily, mc: usize) {
        let m = toy(family, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 3;
        let x: Vec<f64> = match family {
            DecoderFamily::Gaussian => rand_vec(&mut rng, n * 5),
            DecoderFamily::Bernoulli => (0..n * 5).map(|_| rng.random::<f64>()).collect(),
        };
        let eps = standard_normals(&mut rng, n * mc * 2);
        let (_, grads) = m.loss_and_grad(&x, &eps, mc, true).unwrap();
        let (ge, gd) = grads.unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (which, g) in [(0, &ge), (1, &gd)] {
            for (ti, t) in g.tensors().iter().enumerate() {
                for k in 0..t.len() {
                    let mut p = m.clone();
                    let store = if which == 0 { p.encoder_params_mut() } else { p.decoder_params_mut() };
                    store.tensors_mut()[ti].data_mut()[k] += h;
                    let up = p.loss_and_grad(&x, &eps, mc, false).unwrap().0;
                    let store = if which == 0 { p.encoder_params_mut() } else { p.decoder_params_mut() };
                    store.tensors_mut()[ti].data_mut()[k] -= 2.0 * h;
                    let down = p.loss_and_grad(&x, &eps, mc, false).unwrap().0;
                    let num = (up - down) / (2.0 * h);
                    let ana = t.data()[k];
                    worst = worst.max((num - ana).abs() / num.abs().max(ana.abs()).max(1e-2));
                }
            }
        }
        assert!(worst < 1e-3, "{family}: rel err {worst}");
    }

    #[test]
    fn reparameterized_gradient_matches_finite_differences() {
        check_elbo_gradient(DecoderFamily::Gaussian, 1);
        check_elbo_gradient(DecoderFamily::Gaussian, 3);
        check_elbo_gradient(DecoderFamily::Bernoulli, 2);
    }

    #[test]
    fn decoder_pullback_matches_finite_differences() {
        let m = toy(DecoderFamily::Bernoulli, 9);
        let x = [0.0, 1.0, 0.5, 0.2, 0.9];
        let f = |z: &[f64]| -m.decode(z).unwrap().log_density(&x).unwrap();
        let z = [0.3, -0.7];
        let (v, g) = m
            .decoder_pullback(&z, |head| {
                let mut g = vec![0.0; head.len()];
                (nll_head_grad(DecoderFamily::Bernoulli, head, &x, 1.0, &mut g), g)
            })
            .unwrap();
        assert!((v - f(&z)).abs() < 1e-12);
        for j in 0..2 {
            let mut zp = z;
            zp[j] += 1e-6;
            let mut zm = z;
            zm[j] -= 1e-6;
            let num = (f(&zp) - f(&zm)) / 2e-6;
            assert!((num - g[j]).abs() < 1e-6 * num.abs().max(1.0));
        }
    }

    #[test]
    fn bernoulli_decoder_densities() {
        let p = DecoderDist::Bernoulli { logits: vec![0.0, 2.0] };
        let lp = p.log_density(&[1.0, 0.0]).unwrap();
        assert!((lp - (0.5f64.ln() + (1.0 - sigmoid(2.0)).ln())).abs() < 1e-12);
        assert_eq!(p.bhattacharyya(&p).unwrap(), 0.0);
        let q = DecoderDist::Bernoulli { logits: vec![1.0, -3.0] };
        assert_eq!(p.bhattacharyya(&q).unwrap(), q.bhattacharyya(&p).unwrap());
        let (a, b) = (sigmoid(2.0), sigmoid(-3.0));
        let c = sigmoid(1.0);
        let want = -((0.5 * c).sqrt() + (0.5 * (1.0 - c)).sqrt()).ln() - ((a * b).sqrt() + ((1.0 - a) * (1.0 - b)).sqrt()).ln();
        assert!((p.bhattacharyya(&q).unwrap() - want).abs() < 1e-12);
        assert_eq!(p.sample_with(&[0.49, 0.99]), vec![1.0, 0.0]);
    }
}
