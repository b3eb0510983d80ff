use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::param::ParameterStore;

/// Adaptive-moment hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            step_size: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Applies one bias-corrected Adam step to every parameter, in store order,
/// using the gradients currently accumulated. Moment buffers live in the
/// store and persist across calls.
///
/// Fails without touching any value if a gradient is non-finite.
pub fn adam_update(store: &mut ParameterStore, config: &AdamConfig) -> Result<()> {
    if let Some(bad) = store
        .iter()
        .find(|p| p.grad.iter().any(|g| !g.is_finite()))
    {
        return Err(Error::Training(format!(
            "non-finite gradient in parameter `{}`",
            bad.name
        )));
    }
    store.moments.step += 1;
    let t = store.moments.step as i32;
    let correction1 = 1.0 - config.beta1.powi(t);
    let correction2 = 1.0 - config.beta2.powi(t);

    let mut moments = std::mem::take(&mut store.moments);
    for ((p, m), v) in store
        .iter_mut()
        .zip(moments.first.iter_mut())
        .zip(moments.second.iter_mut())
    {
        for k in 0..p.values.len() {
            let g = p.grad[k];
            m[k] = config.beta1 * m[k] + (1.0 - config.beta1) * g;
            v[k] = config.beta2 * v[k] + (1.0 - config.beta2) * g * g;
            let m_hat = m[k] / correction1;
            let v_hat = v[k] / correction2;
            p.values[k] -= config.step_size * m_hat / (v_hat.sqrt() + config.epsilon);
        }
    }
    store.moments = moments;

    if let Some(bad) = store
        .iter()
        .find(|p| p.values.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Training(format!(
            "parameter `{}` became non-finite",
            bad.name
        )));
    }
    Ok(())
}
