//! Scores a normal and an abnormal synthetic sample with every novelty
//! metric.
//!
//! cargo run --release --example score_metrics

use vae_novelty::data::{make_synthetic, SyntheticConfig};
use vae_novelty::novelty::{Metric, Parts, ReferenceSet, ScoreOptions, Scorer};
use vae_novelty::vae::{builtin_architecture, train, DecoderFamily, TrainConfig, VaeModel};

fn main() -> vae_novelty::Result<()> {
    let data = make_synthetic(&SyntheticConfig {
        d: 46,
        n_normal: 600,
        n_abnormal: 1,
        separation: 8.0,
        seed: 0,
    })?;
    let normal = data.select(&(0..500).collect::<Vec<_>>())?;
    let probe_normal = data.row_f64(550);
    let probe_abnormal = data.row_f64(600);

    let family = DecoderFamily::Gaussian;
    let model = VaeModel::new(builtin_architecture("dense46_z8", family)?, family, 0)?;
    let cfg = TrainConfig {
        max_epochs: 30,
        ..TrainConfig::default()
    };
    let (model, _) = train(model, &normal.to_tensor(), &cfg)?;

    let reference = ReferenceSet::build(Some(&model), &normal, Parts::all(), None)?;
    let scorer = Scorer::new(Some(&model), Some(&reference), ScoreOptions::default());
    println!("{:<26}{:>14}{:>14}", "metric", "normal", "abnormal");
    for metric in Metric::ALL {
        let a = scorer.score(metric, &probe_normal, 0)?;
        let b = scorer.score(metric, &probe_abnormal, 0)?;
        println!("{:<26}{:>14.4}{:>14.4}", metric.id(), a.score, b.score);
    }
    Ok(())
}
