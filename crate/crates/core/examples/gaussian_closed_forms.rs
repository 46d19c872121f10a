//! KL divergence, Bhattacharyya distance and mixture densities of diagonal
//! Gaussians.
//!
//! cargo run --example gaussian_closed_forms

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vae_novelty::gaussian::{DiagonalGaussian, GaussianMixture};

fn main() -> vae_novelty::Result<()> {
    let p = DiagonalGaussian::new(vec![0.5, -1.0], vec![0.2, -0.3])?;
    let q = DiagonalGaussian::new(vec![-0.5, 0.0], vec![-0.1, 0.4])?;

    println!("KL(p || N(0, I))  = {:.6}", p.kl_to_standard_normal());
    println!("D_B(p, q)         = {:.6}", p.bhattacharyya(&q)?);
    println!("D_B(p, p)         = {:.6}", p.bhattacharyya(&p)?);

    // Monte Carlo check of the KL term.
    let standard = DiagonalGaussian::standard(2);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 200_000;
    let mut acc = 0.0;
    for _ in 0..n {
        let z = p.sample(&mut rng);
        acc += p.log_density(&z)? - standard.log_density(&z)?;
    }
    println!("KL by sampling    = {:.6}", acc / n as f64);

    let mixture = GaussianMixture::new(vec![p.clone(), q.clone()])?;
    for x in [[0.0, 0.0], [0.5, -1.0], [4.0, 4.0]] {
        println!("mixture density at {x:?} = {:.6e}", mixture.density(&x)?);
    }
    Ok(())
}
