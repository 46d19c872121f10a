use serde::{Deserialize, Serialize};

use super::network::ParameterStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Default::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, zero at step 0.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: ParameterStore,
    v: ParameterStore,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParameterStore) -> Self {
        AdamState {
            m: ParameterStore::zeros_like(params),
            v: ParameterStore::zeros_like(params),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// A non-finite gradient leaves `params` and `state` untouched and reports
/// the index of the offending step.
pub fn adam_step(
    params: &mut ParameterStore,
    grads: &ParameterStore,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !params.same_shapes(grads) || !params.same_shapes(&state.m) {
        return Err(Error::config("gradient shapes do not match parameters"));
    }
    let t = state.step + 1;
    if !grads.is_finite() {
        return Err(Error::Numerical(format!("non-finite gradient at optimizer step {t}")));
    }
    state.step = t;
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    let step_size = cfg.lr / bc1;
    let tensors = params
        .tensors_mut()
        .iter_mut()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut().iter_mut().zip(state.v.tensors_mut()));
    for ((p, g), (m, v)) in tensors {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((p, &g), (m, v)) in it {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= step_size * *m / ((*v / bc2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn scalar(w: f64) -> ParameterStore {
        ParameterStore::new(vec!["w".into()], vec![Tensor::from_vec(vec![w])]).unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&p);
        let g = scalar(2.0); // d/dw w^2 at w = 1
        adam_step(&mut p, &g, &mut st, &AdamConfig::with_lr(0.1)).unwrap();
        let w = p.tensors()[0].data()[0];
        assert!((w - 0.9).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = scalar(0.37);
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &scalar(0.0), &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p.tensors()[0].data()[0], 0.37);
    }

    #[test]
    fn quadratic_bowl_converges() {
        let target = [1.5, -2.0, 0.25];
        let mut p = ParameterStore::new(vec!["w".into()], vec![Tensor::from_vec(vec![0.0; 3])]).unwrap();
        let mut st = AdamState::new(&p);
        let cfg = AdamConfig::with_lr(0.05);
        let mut steps = 0;
        loop {
            let w = p.tensors()[0].data().to_vec();
            let err = w.iter().zip(&target).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if err < 1e-3 {
                break;
            }
            steps += 1;
            assert!(steps <= 500, "no convergence in 500 steps (err {err})");
            let g: Vec<f64> = w.iter().zip(&target).map(|(a, b)| 2.0 * (a - b)).collect();
            let g = ParameterStore::new(vec!["w".into()], vec![Tensor::from_vec(g)]).unwrap();
            adam_step(&mut p, &g, &mut st, &cfg).unwrap();
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut p = scalar(1.0);
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &scalar(f64::NAN), &mut st, &AdamConfig::default()).unwrap_err();
        assert!(err.to_string().contains("step 1"));
        assert_eq!(st.step(), 0);
    }
}
