use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::param::{ParamId, ParameterStore};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is zero compare on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct GroupError {
    pub parameter: String,
    pub probes: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub max_relative_error: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error <= tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Compares analytic gradients with central finite differences.
///
/// `loss_fn` must compute the loss for the current parameter values and
/// accumulate its gradient into the store. Probes are spread round-robin
/// over the parameters (uniform position within each), drawn from `seed`.
/// Values and gradients are restored before returning.
pub fn gradient_check<F>(
    mut loss_fn: F,
    store: &mut ParameterStore,
    probes: usize,
    seed: u64,
) -> GradCheckReport
where
    F: FnMut(&mut ParameterStore) -> f64,
{
    let saved_grads: Vec<Vec<f64>> = store.iter().map(|p| p.grad.clone()).collect();
    store.zero_grad();
    loss_fn(store);
    let analytic: Vec<Vec<f64>> = store.iter().map(|p| p.grad.clone()).collect();

    let candidates: Vec<usize> = (0..store.len())
        .filter(|&i| !analytic[i].is_empty())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups: Vec<GroupError> = candidates
        .iter()
        .map(|&i| GroupError {
            parameter: store.get(ParamId(i)).name.clone(),
            probes: 0,
            max_relative_error: 0.0,
        })
        .collect();

    for probe in 0..probes {
        if candidates.is_empty() {
            break;
        }
        let slot = probe % candidates.len();
        let pi = candidates[slot];
        let id = ParamId(pi);
        let k = rng.gen_range(0..analytic[pi].len());
        let original = store.value(id)[k];

        store.get_mut(id).values[k] = original + FD_STEP;
        let plus = loss_fn(store);
        store.get_mut(id).values[k] = original - FD_STEP;
        let minus = loss_fn(store);
        store.get_mut(id).values[k] = original;

        let numeric = (plus - minus) / (2.0 * FD_STEP);
        let err = relative_error(analytic[pi][k], numeric);
        let group = &mut groups[slot];
        group.probes += 1;
        if err > group.max_relative_error || err.is_nan() {
            group.max_relative_error = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    for (p, g) in store.iter_mut().zip(saved_grads) {
        p.grad = g;
    }
    groups.retain(|g| g.probes > 0);
    let max_relative_error = groups
        .iter()
        .map(|g| g.max_relative_error)
        .fold(0.0, f64::max);
    GradCheckReport {
        groups,
        max_relative_error,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkernel::ops::{cross_entropy, softmax, softmax_cross_entropy_backward, Linear};

    #[test]
    fn linear_cross_entropy_gradients_are_exact() {
        let mut store = ParameterStore::new(11);
        let layer = Linear::new(&mut store, "out", 4, 5).unwrap();
        let x = [0.9, -1.1, 0.4, 1.7];
        let target = 3;
        let loss_fn = |s: &mut ParameterStore| {
            let logits = layer.forward(s, &x);
            let p = softmax(&logits).unwrap();
            let loss = cross_entropy(&p, target).unwrap();
            let d = softmax_cross_entropy_backward(&p, target);
            layer.backward(s, &x, &d);
            loss
        };
        let before = store.snapshot_values();
        let report = gradient_check(loss_fn, &mut store, 20, 5);
        assert!(report.max_relative_error <= 1e-6, "{report:?}");
        assert_eq!(report.groups.iter().map(|g| g.probes).sum::<usize>(), 20);
        assert_eq!(before, store.snapshot_values());
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let mut store = ParameterStore::new(1);
        let id = store.add("x", &[3]).unwrap();
        // loss = sum x^2, but report gradient x instead of 2x
        let report = gradient_check(
            |s: &mut ParameterStore| {
                let v = s.value(id).to_vec();
                for (g, x) in s.get_mut(id).grad.iter_mut().zip(&v) {
                    *g += x;
                }
                v.iter().map(|x| x * x).sum()
            },
            &mut store,
            6,
            0,
        );
        assert!(report.max_relative_error > 0.4);
    }
}
