use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::VaeModel;
use crate::data::{split, SplitSpec};
use crate::error::{check_dim, Error, Result};
use crate::gaussian::standard_normals;
use crate::nn::{adam_step, AdamConfig, AdamState, ParameterStore, Tensor};

/// Rows per parallel work item; gradients are reduced in chunk order so the
/// result does not depend on the number of workers.
const TRAIN_CHUNK: usize = 16;

/// Salt for the frozen noise used to evaluate losses.
const EVAL_SALT: u64 = 0x6576_616c_6e6f_6973;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Share of the data held out for early stopping by [`train`].
    pub validation_fraction: f64,
    /// Latent samples per datapoint and step.
    pub mc_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            validation_fraction: 0.1,
            mc_samples: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::config(format!("train config: {what}")));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 || self.mc_samples == 0 {
            return bad("batch_size, max_epochs, patience and mc_samples must be at least 1");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Mean negative ELBO after an epoch. Epoch 0 is the untrained model; later
/// training losses are averages over the epoch's minibatches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_neg_elbo\tval_neg_elbo\tbest\n");
        for r in &self.epochs {
            let best = u8::from(r.epoch == self.best_epoch);
            writeln!(s, "{}\t{}\t{}\t{best}", r.epoch, r.train_loss, r.val_loss).unwrap();
        }
        s
    }
}

/// Holds out `validation_fraction` of `data` and trains on the rest.
pub fn train(model: VaeModel, data: &Tensor, cfg: &TrainConfig) -> Result<(VaeModel, TrainLog)> {
    train_observed(model, data, cfg, |_| {})
}

/// [`train`] reporting every epoch record to `observer`.
pub fn train_observed(
    model: VaeModel,
    data: &Tensor,
    cfg: &TrainConfig,
    observer: impl FnMut(&EpochRecord),
) -> Result<(VaeModel, TrainLog)> {
    cfg.validate()?;
    let n = data.batch();
    let s = split(
        n,
        &SplitSpec::Fractions {
            train: 1.0 - cfg.validation_fraction,
            validation: cfg.validation_fraction,
            seed: cfg.seed,
        },
    )?;
    if s.train.is_empty() || s.validation.is_empty() {
        return Err(Error::data(format!("{n} samples are too few to hold out a validation set")));
    }
    let pick = |idx: &[usize]| -> Result<Tensor> {
        let d = data.sample_len();
        let mut rows = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            rows.extend_from_slice(data.sample(i));
        }
        Tensor::new(vec![idx.len(), d], rows)
    };
    train_with_validation(model, &pick(&s.train)?, &pick(&s.validation)?, cfg, observer)
}

/// Adam on the mean per-sample negative ELBO with early stopping on
/// `validation`. Parameters are rounded to `f32` after every epoch and the
/// best epoch's parameters are returned. `observer` sees every epoch record.
pub fn train_with_validation(
    mut model: VaeModel,
    train: &Tensor,
    validation: &Tensor,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochRecord),
) -> Result<(VaeModel, TrainLog)> {
    cfg.validate()?;
    let d = model.input_len();
    let l = model.latent_dim();
    check_dim(d, train.sample_len())?;
    check_dim(d, validation.sample_len())?;
    let n = train.batch();
    if n == 0 || validation.batch() == 0 {
        return Err(Error::Empty("training data"));
    }
    let train_eps = standard_normals(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_SALT), n * l);
    let val_eps = standard_normals(&mut ChaCha8Rng::seed_from_u64(cfg.seed ^ EVAL_SALT ^ 1), validation.batch() * l);
    let record = |model: &VaeModel, epoch: usize, train_loss: f64| -> Result<EpochRecord> {
        let val_loss = mean_loss(model, validation.data(), &val_eps)?;
        if !val_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                step: 0,
                reason: format!("validation loss is {val_loss}"),
            });
        }
        Ok(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        })
    };

    let mut log = TrainLog::default();
    let first = record(&model, 0, mean_loss(&model, train.data(), &train_eps)?)?;
    observer(&first);
    log.epochs.push(first);
    let mut best = (first.val_loss, model.encoder_params.clone(), model.decoder_params.clone());

    let adam = AdamConfig::with_lr(cfg.lr);
    let mut enc_state = AdamState::new(&model.encoder_params);
    let mut dec_state = AdamState::new(&model.decoder_params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let fail = |reason: String| Error::Training { epoch, step, reason };
            let mut rows = Vec::with_capacity(batch.len() * d);
            for &i in batch {
                rows.extend_from_slice(train.sample(i));
            }
            let eps = standard_normals(&mut rng, batch.len() * cfg.mc_samples * l);
            let parts: Vec<(f64, Option<(ParameterStore, ParameterStore)>)> = rows
                .par_chunks(TRAIN_CHUNK * d)
                .zip(eps.par_chunks(TRAIN_CHUNK * cfg.mc_samples * l))
                .map(|(x, e)| model.loss_and_grad(x, e, cfg.mc_samples, true))
                .collect::<Result<_>>()?;
            let mut loss = 0.0;
            let mut enc_grad = ParameterStore::zeros_like(&model.encoder_params);
            let mut dec_grad = ParameterStore::zeros_like(&model.decoder_params);
            for (part_loss, grads) in parts {
                let (ge, gd) = grads.expect("gradients requested");
                loss += part_loss;
                enc_grad.add_assign(&ge);
                dec_grad.add_assign(&gd);
            }
            if !loss.is_finite() {
                return Err(fail(format!("minibatch loss is {loss}")));
            }
            let scale = 1.0 / batch.len() as f64;
            enc_grad.scale(scale);
            dec_grad.scale(scale);
            epoch_loss += loss;
            adam_step(&mut model.encoder_params, &enc_grad, &mut enc_state, &adam).map_err(|e| fail(e.to_string()))?;
            adam_step(&mut model.decoder_params, &dec_grad, &mut dec_state, &adam).map_err(|e| fail(e.to_string()))?;
        }
        model.encoder_params.round_to_f32();
        model.decoder_params.round_to_f32();
        let rec = record(&model, epoch, epoch_loss / n as f64)?;
        observer(&rec);
        log.epochs.push(rec);
        if rec.val_loss < best.0 {
            best = (rec.val_loss, model.encoder_params.clone(), model.decoder_params.clone());
            log.best_epoch = epoch;
        } else if epoch - log.best_epoch >= cfg.patience {
            log.stopped_early = epoch < cfg.max_epochs;
            break;
        }
    }
    model.encoder_params = best.1;
    model.decoder_params = best.2;
    Ok((model, log))
}

/// Mean negative ELBO over row-major `rows` with one frozen noise draw each.
pub(crate) fn mean_loss(model: &VaeModel, rows: &[f64], eps: &[f64]) -> Result<f64> {
    let (d, l) = (model.input_len(), model.latent_dim());
    let n = rows.len() / d;
    let parts: Vec<f64> = rows
        .par_chunks(super::EVAL_CHUNK * d)
        .zip(eps.par_chunks(super::EVAL_CHUNK * l))
        .map(|(x, e)| model.loss_and_grad(x, e, 1, false).map(|(v, _)| v))
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum::<f64>() / n as f64)
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::vae::{builtin_architecture, DecoderFamily};

    fn two_clusters(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<f64> = (0..n)
            .flat_map(|i| {
                let c = if i % 2 == 0 { 1.0 } else { -1.0 };
                (0..6).map(|j| c * (j as f64 * 0.3 - 0.5) + 0.1 * rng.random_range(-1.0..1.0)).collect::<Vec<_>>()
            })
            .collect();
        Tensor::new(vec![n, 6], rows).unwrap()
    }

    fn small_model(seed: u64) -> VaeModel {
        let arch = builtin_architecture("dense:6-16-2", DecoderFamily::Gaussian).unwrap();
        VaeModel::new(arch, DecoderFamily::Gaussian, seed).unwrap()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            lr: 1e-2,
            batch_size: 32,
            max_epochs: epochs,
            patience: 5,
            seed: 11,
            validation_fraction: 0.2,
            mc_samples: 1,
        }
    }

    #[test]
    fn identical_seeds_give_identical_logs_and_models() {
        let data = two_clusters(200, 1);
        let (m1, l1) = train(small_model(3), &data, &cfg(6)).unwrap();
        let (m2, l2) = train(small_model(3), &data, &cfg(6)).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(m1, m2);
    }

    #[test]
    fn returned_parameters_have_the_lowest_validation_loss() {
        let data = two_clusters(300, 2);
        let c = cfg(40);
        let (m, log) = train(small_model(4), &data, &c).unwrap();
        let best = log.best().unwrap().val_loss;
        assert!(log.epochs.iter().all(|r| best <= r.val_loss));
        let first = log.epochs[0].val_loss;
        assert!(best < 0.5 * first.abs().max(first), "{first} -> {best}");
        // the returned model reproduces the logged best validation loss
        let s = split(300, &SplitSpec::Fractions { train: 0.8, validation: 0.2, seed: c.seed }).unwrap();
        let rows: Vec<f64> = s.validation.iter().flat_map(|&i| data.sample(i).to_vec()).collect();
        let eps = standard_normals(&mut ChaCha8Rng::seed_from_u64(c.seed ^ EVAL_SALT ^ 1), s.validation.len() * 2);
        assert_eq!(mean_loss(&m, &rows, &eps).unwrap(), best);
    }

    #[test]
    fn point_mass_is_reconstructed() {
        let x = [0.5, -1.0, 2.0, 0.0, 1.5, -0.5];
        let data = Tensor::new(vec![40, 6], x.repeat(40)).unwrap();
        let c = TrainConfig {
            lr: 1e-2,
            batch_size: 8,
            max_epochs: 150,
            patience: 150,
            seed: 5,
            validation_fraction: 0.25,
            mc_samples: 1,
        };
        let (m, _) = train(small_model(6), &data, &c).unwrap();
        let recon = m.reconstruct(&x).unwrap().mean();
        let err: f64 = recon.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(err < 1e-2, "squared reconstruction error {err}");
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let data = two_clusters(20, 0);
        let mut c = cfg(1);
        c.batch_size = 0;
        assert!(matches!(train(small_model(0), &data, &c), Err(Error::Config(_))));
        c = cfg(1);
        c.patience = 0;
        assert!(train(small_model(0), &data, &c).is_err());
    }
}
