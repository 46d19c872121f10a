//! Projected L-BFGS on the Rosenbrock function, with and without a box.
//!
//! cargo run --example latent_search

use vae_novelty::latent_search::{minimize_observed, Bounds, SearchConfig};

fn rosenbrock(z: &[f64]) -> (f64, Vec<f64>) {
    let (x, y) = (z[0], z[1]);
    let value = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
    let grad = vec![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)];
    (value, grad)
}

fn main() -> vae_novelty::Result<()> {
    let z0 = [-1.2, 1.0];
    let free = SearchConfig::default();
    let mut trace = 0;
    let r = minimize_observed(rosenbrock, &z0, &free, |_, _| trace += 1)?;
    println!(
        "unbounded: z = [{:.6}, {:.6}], f = {:.3e}, {} iterations, converged {}, {trace} accepted steps",
        r.z[0], r.z[1], r.value, r.iterations, r.converged
    );

    let boxed = SearchConfig {
        bounds: Some(Bounds::PerDim(vec![[-2.0, 0.5], [-1.0, 2.0]])),
        ..SearchConfig::default()
    };
    let r = minimize_observed(rosenbrock, &z0, &boxed, |z, _| assert!(z[0] <= 0.5))?;
    println!(
        "x <= 0.5:  z = [{:.6}, {:.6}], f = {:.6}, {} iterations, converged {}",
        r.z[0], r.z[1], r.value, r.iterations, r.converged
    );
    Ok(())
}
