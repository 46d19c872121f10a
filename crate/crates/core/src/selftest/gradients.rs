//! Analytic gradients against central differences, and the search's
//! monotonicity and feasibility.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Check, SuiteReport};
use crate::error::Result;
use crate::latent_search::{minimize_observed, Bounds, SearchConfig};
use crate::nn::{Activation, LayerSpec, Network, ParameterStore, Tensor};
use crate::vae::{builtin_architecture, DecoderFamily, VaeModel};

fn rel(num: f64, ana: f64) -> f64 {
    (num - ana).abs() / num.abs().max(ana.abs()).max(1e-2)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

fn activation(rng: &mut ChaCha8Rng) -> Activation {
    [Activation::Identity, Activation::Relu, Activation::Sigmoid][rng.random_range(0..3)]
}

fn random_network(rng: &mut ChaCha8Rng) -> Result<Network> {
    if rng.random_bool(0.5) {
        let depth = rng.random_range(1..4);
        let layers = (0..depth)
            .map(|_| LayerSpec::dense(rng.random_range(1..7), activation(rng)))
            .collect();
        return Network::new(vec![rng.random_range(1..7)], layers);
    }
    let c = rng.random_range(1..3);
    let mut layers = vec![LayerSpec::Conv2d {
        channels: rng.random_range(1..4),
        filter: [rng.random_range(1..4), rng.random_range(1..4)],
        stride: [rng.random_range(1..3), rng.random_range(1..3)],
        activation: activation(rng),
    }];
    if rng.random_bool(0.5) {
        layers.push(LayerSpec::Maxpool2d {
            filter: [2, 2],
            stride: [2, 2],
        });
    }
    layers.push(LayerSpec::dense(8, activation(rng)));
    layers.push(LayerSpec::Reshape { shape: vec![2, 2, 2] });
    layers.push(LayerSpec::TransposedConv2d {
        channels: rng.random_range(1..3),
        filter: [rng.random_range(1..4), rng.random_range(1..4)],
        stride: [rng.random_range(1..3), rng.random_range(1..3)],
        activation: activation(rng),
    });
    Network::new(vec![c, 7, 6], layers)
}

/// Worst relative error between backprop and central differences of
/// `<g, f(x)>` over all parameters and inputs.
fn network_fd(net: &Network, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut params = net.init_params(rng);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let mut shape = vec![2];
    shape.extend_from_slice(net.input_shape());
    let x = random_tensor(rng, &shape);
    let y = net.forward(&params, &x)?;
    let g = random_tensor(rng, y.shape());
    let loss = |p: &ParameterStore, x: &Tensor| -> Result<f64> {
        Ok(net.forward(p, x)?.data().iter().zip(g.data()).map(|(a, b)| a * b).sum())
    };
    let (pg, ig) = net.backward(&params, &x, &g)?;
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for ti in 0..params.len() {
        for k in 0..params.tensors()[ti].len() {
            let mut p = params.clone();
            p.tensors_mut()[ti].data_mut()[k] += h;
            let up = loss(&p, &x)?;
            p.tensors_mut()[ti].data_mut()[k] -= 2.0 * h;
            let down = loss(&p, &x)?;
            worst = worst.max(rel((up - down) / (2.0 * h), pg.tensors()[ti].data()[k]));
        }
    }
    for k in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[k] += h;
        let up = loss(&params, &xp)?;
        xp.data_mut()[k] -= 2.0 * h;
        let down = loss(&params, &xp)?;
        worst = worst.max(rel((up - down) / (2.0 * h), ig.data()[k]));
    }
    Ok(worst)
}

/// Reparameterised negative ELBO with frozen noise against central
/// differences in every encoder and decoder parameter.
fn elbo_fd(family: DecoderFamily, rng: &mut ChaCha8Rng) -> Result<f64> {
    let arch = builtin_architecture("dense:5-4-3", family)?;
    let mut model = VaeModel::new(arch, family, rng.random())?;
    for encoder in [true, false] {
        let store = if encoder { model.encoder_params_mut() } else { model.decoder_params_mut() };
        for t in store.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
    }
    let (n, mc) = (3, 2);
    let x: Vec<f64> = (0..n * 5)
        .map(|_| match family {
            DecoderFamily::Gaussian => rng.random_range(-1.0..1.0),
            DecoderFamily::Bernoulli => rng.random(),
        })
        .collect();
    let eps: Vec<f64> = (0..n * mc * 3).map(|_| rng.sample(StandardNormal)).collect();
    let (_, grads) = model.loss_and_grad(&x, &eps, mc, true)?;
    let (ge, gd) = grads.expect("gradients requested");
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for encoder in [true, false] {
        let count = if encoder { ge.len() } else { gd.len() };
        for ti in 0..count {
            let len = if encoder { ge.tensors()[ti].len() } else { gd.tensors()[ti].len() };
            for k in 0..len {
                let eval = |delta: f64| -> Result<f64> {
                    let mut m = model.clone();
                    let store = if encoder { m.encoder_params_mut() } else { m.decoder_params_mut() };
                    store.tensors_mut()[ti].data_mut()[k] += delta;
                    Ok(m.loss_and_grad(&x, &eps, mc, false)?.0)
                };
                let num = (eval(h)? - eval(-h)?) / (2.0 * h);
                let ana = if encoder { ge.tensors()[ti].data()[k] } else { gd.tensors()[ti].data()[k] };
                worst = worst.max(rel(num, ana));
            }
        }
    }
    Ok(worst)
}

/// Random non-convex problems, boxed and free: every accepted iterate stays
/// feasible and never increases the objective.
fn search_problems(rng: &mut ChaCha8Rng, count: usize) -> Result<usize> {
    let mut bad = 0;
    for _ in 0..count {
        let d = rng.random_range(1..6);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-20.0..20.0)).collect();
        let c: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let z0: Vec<f64> = (0..d).map(|_| rng.random_range(-9.0..9.0)).collect();
        let f = |z: &[f64]| {
            let mut v = 0.0;
            let mut g = vec![0.0; d];
            for i in 0..d {
                v += 0.1 * (z[i] - a[i]).powi(2) + c[i] * (3.0 * z[i]).sin();
                g[i] = 0.2 * (z[i] - a[i]) + 3.0 * c[i] * (3.0 * z[i]).cos();
            }
            (v, g)
        };
        let bounds = match rng.random_range(0..3) {
            0 => None,
            1 => Some(Bounds::default()),
            _ => Some(Bounds::PerDim(
                z0.iter()
                    .map(|&v| [v - rng.random_range(0.1..5.0), v + rng.random_range(0.1..5.0)])
                    .collect(),
            )),
        };
        let cfg = SearchConfig {
            bounds: bounds.clone(),
            seed: rng.random(),
            ..Default::default()
        };
        let mut last = f64::INFINITY;
        let mut ok = true;
        let feasible = |z: &[f64]| bounds.as_ref().is_none_or(|b| b.contains(z));
        let r = minimize_observed(f, &z0, &cfg, |z, v| {
            ok &= feasible(z) && v <= last;
            last = v;
        })?;
        ok &= r.value <= r.initial_value && feasible(&r.z);
        let more = SearchConfig { restarts: 3, ..cfg };
        let best = minimize_observed(f, &z0, &more, |z, _| ok &= feasible(z))?;
        ok &= best.value <= r.value && feasible(&best.z);
        if !ok {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Finite-difference checks of networks and the ELBO, plus 1000 searches.
pub fn gradient_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();

    let mut worst: f64 = 0.0;
    for _ in 0..25 {
        let net = random_network(&mut rng)?;
        worst = worst.max(network_fd(&net, &mut rng)?);
    }
    checks.push(Check::new(
        "backprop matches central differences on 25 random networks",
        worst < 1e-4,
        format!("worst relative error {worst:.2e}"),
    ));

    for family in [DecoderFamily::Gaussian, DecoderFamily::Bernoulli] {
        let mut worst: f64 = 0.0;
        for _ in 0..3 {
            worst = worst.max(elbo_fd(family, &mut rng)?);
        }
        checks.push(Check::new(
            format!("{family} reparameterised ELBO gradient matches central differences"),
            worst < 1e-3,
            format!("worst relative error {worst:.2e}"),
        ));
    }

    let bad = search_problems(&mut rng, 1000)?;
    checks.push(Check::new(
        "latent search is monotone and feasible on 1000 problems",
        bad == 0,
        format!("{bad} violations"),
    ));
    Ok(SuiteReport {
        suite: "gradients",
        checks,
    })
}
