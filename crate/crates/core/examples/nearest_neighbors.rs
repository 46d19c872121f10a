//! Exact nearest-neighbour queries over vectors and over Gaussian
//! posteriors, with a reproducible reference subsample.
//!
//! cargo run --release --example nearest_neighbors

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use vae_novelty::gaussian::DiagonalGaussian;
use vae_novelty::nn_index::{GaussianIndex, VectorIndex};

fn main() -> vae_novelty::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (n, d) = (5000, 16);
    let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();

    let index = VectorIndex::from_rows(&rows)?;
    let query: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let hit = index.nearest_sq_dist(&query)?;
    println!("nearest of {n}: row {} at squared distance {:.4}", hit.id, hit.dist);

    let small = index.subsample(500, 3)?;
    let hit_small = small.nearest_sq_dist(&query)?;
    println!("nearest of 500 sampled: row {} at squared distance {:.4}", hit_small.id, hit_small.dist);

    let posteriors: Vec<DiagonalGaussian> = rows
        .iter()
        .map(|r| DiagonalGaussian::new(r[..4].to_vec(), r[4..8].iter().map(|v| 0.3 * v).collect()))
        .collect::<Result<_, _>>()?;
    let gindex = GaussianIndex::new(&posteriors)?;
    let q = DiagonalGaussian::new(vec![0.0; 4], vec![0.0; 4])?;
    let hit = gindex.nearest(&q)?;
    println!("closest posterior to N(0, I): row {} at Bhattacharyya distance {:.4}", hit.id, hit.dist);
    Ok(())
}
