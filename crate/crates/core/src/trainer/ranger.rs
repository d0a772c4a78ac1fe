//! Rectified-Adam inner step wrapped in lookahead slow weights.
//!
//! The inner update keeps bias-corrected first/second moments and applies the
//! variance-rectification factor once enough steps have accumulated for it to
//! be trustworthy (rho_t > 5, matching the reference implementations); before
//! that it falls back to a momentum-style step that ignores the second
//! moment. Every `lookahead_k` inner steps the slow weights move a fraction
//! `lookahead_alpha` toward the fast weights and the fast weights snap back.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{num, Element, Tensor};
use crate::trainer::TrainConfig;

/// Per-parameter optimizer state, keyed by parameter name.
#[derive(Debug, Clone)]
pub struct RangerState<T: Element> {
    pub step: u64,
    pub m: BTreeMap<String, Vec<T>>,
    pub v: BTreeMap<String, Vec<T>>,
    pub slow: BTreeMap<String, Vec<T>>,
}

impl<T: Element> RangerState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        let mut slow = BTreeMap::new();
        for (name, tensor) in params.iter() {
            m.insert(name.to_string(), vec![T::zero(); tensor.numel()]);
            v.insert(name.to_string(), vec![T::zero(); tensor.numel()]);
            slow.insert(name.to_string(), tensor.data().to_vec());
        }
        RangerState {
            step: 0,
            m,
            v,
            slow,
        }
    }
}

/// Variance-rectification factor; `None` while rho_t <= 5.
fn rectification(beta2: f64, t: f64) -> Option<f64> {
    let rho_inf = 2.0 / (1.0 - beta2) - 1.0;
    let beta2_t = beta2.powf(t);
    let rho_t = rho_inf - 2.0 * t * beta2_t / (1.0 - beta2_t);
    if rho_t > 5.0 {
        let r = (rho_t - 4.0) * (rho_t - 2.0) * rho_inf
            / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t);
        Some(r.sqrt())
    } else {
        None
    }
}

/// One optimizer step over every parameter in the store. Gradients missing
/// from `grads` are treated as zero; non-finite gradients abort the step.
pub fn ranger_step<T: Element>(
    params: &mut ParamStore<T>,
    grads: &BTreeMap<String, Vec<T>>,
    state: &mut RangerState<T>,
    config: &TrainConfig,
) -> Result<()> {
    for (name, grad) in grads {
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NumericFailure {
                context: format!("non-finite gradient for parameter '{name}'"),
            });
        }
    }

    let t = state.step + 1;
    let beta1 = num::<T>(config.beta1);
    let beta2 = num::<T>(config.beta2);
    let one_minus_beta1 = T::one() - beta1;
    let one_minus_beta2 = T::one() - beta2;
    let eps = num::<T>(config.eps);
    let lr = num::<T>(config.lr);
    let bias1 = num::<T>(1.0 - config.beta1.powf(t as f64));
    let bias2_sqrt = num::<T>((1.0 - config.beta2.powf(t as f64)).sqrt());
    let rect = rectification(config.beta2, t as f64).map(num::<T>);

    let names = params.names();
    let zero_grad: Vec<T> = Vec::new();
    for name in &names {
        let grad: &[T] = grads.get(name).map_or(&zero_grad, |g| g.as_slice());
        let old = params.get(name)?.clone();
        let m = state.m.get_mut(name).expect("state tracks every parameter");
        let v = state.v.get_mut(name).expect("state tracks every parameter");
        let mut new_data = old.data().to_vec();
        for i in 0..new_data.len() {
            let g = grad.get(i).copied().unwrap_or_else(T::zero);
            m[i] = beta1 * m[i] + one_minus_beta1 * g;
            v[i] = beta2 * v[i] + one_minus_beta2 * g * g;
            let m_hat = m[i] / bias1;
            let update = match rect {
                Some(r) => m_hat * r * bias2_sqrt / (v[i].sqrt() + eps),
                None => m_hat,
            };
            new_data[i] = new_data[i] - lr * update;
        }
        params.replace(name, Tensor::param_from_vec(new_data, old.shape())?)?;
    }

    state.step = t;
    if t % config.lookahead_k == 0 {
        let alpha = num::<T>(config.lookahead_alpha);
        for name in &names {
            let fast = params.get(name)?.clone();
            let slow = state.slow.get_mut(name).expect("state tracks every parameter");
            for (s, &f) in slow.iter_mut().zip(fast.data()) {
                *s = *s + alpha * (f - *s);
            }
            params.replace(name, Tensor::param_from_vec(slow.clone(), fast.shape())?)?;
        }
    }
    Ok(())
}
