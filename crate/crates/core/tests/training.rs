use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vae_novelty::data::FeatureMatrix;
use vae_novelty::vae::{builtin_architecture, save_checkpoint, train, DecoderFamily, TrainConfig, TrainLog, VaeModel};

const D: usize = 12;

/// Two clusters on a random 2-D plane in 12 dimensions, plus small noise.
/// Outliers leave the plane.
struct Fixture {
    normal: FeatureMatrix,
    outliers: Vec<Vec<f64>>,
}

fn fixture() -> Fixture {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut normal_draw = || -> f64 { rng.sample(StandardNormal) };
    let basis: Vec<Vec<f64>> = (0..2).map(|_| (0..D).map(|_| normal_draw() / 2.0).collect()).collect();
    let mut rows = Vec::new();
    for i in 0..600 {
        let centre = if i % 2 == 0 { [-2.0, 0.0] } else { [2.0, 1.0] };
        let z = [centre[0] + 0.5 * normal_draw(), centre[1] + 0.5 * normal_draw()];
        let row: Vec<f64> = (0..D)
            .map(|j| ((z[0] * basis[0][j] + z[1] * basis[1][j] + 0.05 * normal_draw()) as f32) as f64)
            .collect();
        rows.push(row);
    }
    let outliers = (0..50).map(|_| (0..D).map(|_| 3.0 * normal_draw()).collect()).collect();
    Fixture {
        normal: FeatureMatrix::from_rows(&rows).unwrap(),
        outliers,
    }
}

fn config() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        batch_size: 32,
        max_epochs: 60,
        patience: 10,
        ..TrainConfig::default()
    }
}

fn fit(data: &FeatureMatrix) -> (VaeModel, TrainLog) {
    let family = DecoderFamily::Gaussian;
    let model = VaeModel::new(builtin_architecture("dense:12-16-2", family).unwrap(), family, 4).unwrap();
    train(model, &data.to_tensor(), &config()).unwrap()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn trained_model_separates_structure_from_outliers() {
    let f = fixture();
    let (model, log) = fit(&f.normal);

    let first = log.epochs[0].val_loss;
    let best = log.best().unwrap().val_loss;
    assert!(best <= first - 0.5 * first.abs(), "validation loss {first} -> {best}");

    let kl = |x: &[f64]| model.encode(x).unwrap().kl_to_standard_normal();
    let normal_kl = mean((0..f.normal.n()).map(|i| kl(&f.normal.row_f64(i))));
    let outlier_kl = mean(f.outliers.iter().map(|x| kl(x)));
    assert!(normal_kl < outlier_kl, "KL normal {normal_kl}, outliers {outlier_kl}");

    let sq = |x: &[f64]| -> f64 {
        let r = model.reconstruct(x).unwrap().mean();
        x.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / D as f64
    };
    let normal_err = mean((0..f.normal.n()).map(|i| sq(&f.normal.row_f64(i))));
    let outlier_err = mean(f.outliers.iter().map(|x| sq(x)));
    assert!(normal_err < 0.05, "per-feature reconstruction error {normal_err}");
    assert!(outlier_err > 10.0 * normal_err, "outlier error {outlier_err} vs normal {normal_err}");
}

#[test]
fn training_does_not_depend_on_worker_count() {
    let f = fixture();
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for workers in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
        let (model, log) = pool.install(|| fit(&f.normal));
        let path = dir.path().join(format!("w{workers}.ckpt"));
        save_checkpoint(&model, &path).unwrap();
        files.push((std::fs::read(&path).unwrap(), log));
    }
    assert_eq!(files[0].1, files[1].1);
    assert!(files[0].0 == files[1].0, "checkpoints differ");
}
