//! Sweeps the cluster separation of the synthetic data set and reports the
//! AUC of the feature-space nearest-neighbour baseline at each setting.
//!
//! cargo run --release --example synthetic_baseline

use vae_novelty::cli::{score_matrix, evaluate_rows, RunConfig};
use vae_novelty::data::{make_synthetic, split, SplitSpec};
use vae_novelty::novelty::Metric;

fn main() -> vae_novelty::Result<()> {
    let mut cfg = RunConfig::default();
    for separation in [3.0, 4.0, 4.25, 4.35, 4.5, 5.0, 6.0] {
        let mut aucs = Vec::new();
        for seed in 0..5 {
            cfg.synthetic.separation = separation;
            cfg.seed = seed;
            let data = make_synthetic(&cfg.synthetic.generator(seed))?;
            let n_normal = cfg.synthetic.n_normal;
            let s = split(
                n_normal,
                &SplitSpec::Fractions {
                    train: 0.8,
                    validation: 0.2,
                    seed,
                },
            )?;
            let train = data.select(&s.train)?;
            let test_rows: Vec<usize> = s.validation.iter().copied().chain(n_normal..data.n()).collect();
            let test = data.select(&test_rows)?;
            let rows = score_matrix(None, &train, &test, &[Metric::BaselineNn], &cfg)?;
            aucs.push(evaluate_rows(&rows, None, 10)?[0].auc);
        }
        let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
        println!("separation {separation:.2}: baseline-nn AUC {mean:.4} (seeds {aucs:.3?})");
    }
    Ok(())
}
