//! Trains the smallest dense VAE on synthetic data and round-trips the
//! checkpoint.
//!
//! cargo run --release --example train_vae

use vae_novelty::data::{make_synthetic, SyntheticConfig};
use vae_novelty::vae::{
    builtin_architecture, load_checkpoint, save_checkpoint, train_observed, DecoderFamily, TrainConfig, VaeModel,
};

fn main() -> vae_novelty::Result<()> {
    let data = make_synthetic(&SyntheticConfig {
        d: 46,
        n_normal: 1000,
        n_abnormal: 0,
        separation: 0.0,
        seed: 0,
    })?;

    let family = DecoderFamily::Gaussian;
    let model = VaeModel::new(builtin_architecture("dense46_z8", family)?, family, 0)?;
    let cfg = TrainConfig {
        max_epochs: 20,
        ..TrainConfig::default()
    };
    let (model, log) = train_observed(model, &data.to_tensor(), &cfg, |r| {
        println!("epoch {:3}  train {:.4}  validation {:.4}", r.epoch, r.train_loss, r.val_loss);
    })?;
    println!("best epoch {}, stopped early: {}", log.best_epoch, log.stopped_early);

    let dir = std::env::temp_dir().join("vae_novelty_train_example");
    std::fs::create_dir_all(&dir).map_err(|e| vae_novelty::Error::io(&dir, e))?;
    let path = dir.join("model.ckpt");
    save_checkpoint(&model, &path)?;
    let back = load_checkpoint(&path)?;
    let x = data.row_f64(0);
    assert_eq!(model.encode(&x)?, back.encode(&x)?);
    println!("checkpoint {} reloads identically", path.display());
    Ok(())
}
