//! Adam optimizer with bias correction, plus global-norm gradient clipping.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::ParamStore;

/// Per-parameter first/second moment estimates and the shared step counter.
/// The learning rate lives here so a schedule can adjust it between steps.
#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(beta1: f64, beta2: f64, epsilon: f64, learning_rate: f64) -> Self {
        AdamState {
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            step_count: 0,
            beta1,
            beta2,
            epsilon,
            learning_rate,
        }
    }

    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        match (self.first_moment.get(name), self.second_moment.get(name)) {
            (Some(m), Some(v)) => Some((m, v)),
            _ => None,
        }
    }

    /// Names of all parameters with recorded moments, in sorted order.
    pub fn moments_names(&self) -> impl Iterator<Item = &str> {
        self.first_moment.keys().map(String::as_str)
    }

    pub fn restore_moments(&mut self, name: &str, first: Vec<f64>, second: Vec<f64>) {
        self.first_moment.insert(name.to_string(), first);
        self.second_moment.insert(name.to_string(), second);
    }
}

/// One bias-corrected Adam update over every non-frozen parameter present in
/// `grads`. Gradient shapes must match their parameters.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Vec<f64>>,
    state: &mut AdamState,
) -> Result<()> {
    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);

    for (name, grad) in grads {
        if params.is_frozen(name) {
            continue;
        }
        let tensor = params.get_mut(name)?;
        if grad.len() != tensor.numel() {
            return Err(Error::Contract(format!(
                "gradient for `{name}` has {} values, parameter has {}",
                grad.len(),
                tensor.numel()
            )));
        }
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; grad.len()]);
        let values = tensor.values_mut();
        for i in 0..grad.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bias1;
            let v_hat = v[i] / bias2;
            values[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Scales all gradients in place so their global L2 norm is at most
/// `max_norm`; returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Vec<f64>>, max_norm: f64) -> f64 {
    let sq: f64 = grads
        .values()
        .flat_map(|g| g.iter())
        .map(|&x| x * x)
        .sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
    }
    norm
}
