//! Adam with decoupled weight decay.
//!
//! ```text
//! m ← β₁m + (1−β₁)g
//! v ← β₂v + (1−β₂)g²
//! M ← M − lr·(m̂/(√v̂ + ε) + λM),  m̂ = m/(1−β₁ᵗ), v̂ = v/(1−β₂ᵗ)
//! ```

use serde::{Deserialize, Serialize};

use super::{ProbeError, ProbeMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// First/second moment estimates and the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros(len: usize) -> Self {
        AdamState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// Applies one update in place. Fails if any weight becomes non-finite.
pub fn adamw_step(
    probe: &mut ProbeMatrix,
    gradient: &[f64],
    state: &mut AdamState,
    learning_rate: f64,
    params: &AdamWParams,
) -> Result<(), ProbeError> {
    let n = probe.weights().len();
    if gradient.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(ProbeError::DimensionMismatch {
            expected: n,
            actual: gradient.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - params.beta1.powi(t);
    let bias2 = 1.0 - params.beta2.powi(t);

    let weights = probe.weights_mut();
    for i in 0..n {
        let g = gradient[i];
        state.m[i] = params.beta1 * state.m[i] + (1.0 - params.beta1) * g;
        state.v[i] = params.beta2 * state.v[i] + (1.0 - params.beta2) * g * g;
        let m_hat = state.m[i] / bias1;
        let v_hat = state.v[i] / bias2;
        let w = weights[i];
        weights[i] = w - learning_rate * (m_hat / (v_hat.sqrt() + params.epsilon) + params.weight_decay * w);
    }
    if !probe.is_finite() {
        return Err(ProbeError::NonFinite { step: state.step });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe() -> ProbeMatrix {
        ProbeMatrix::from_rows(2, 3, vec![0.5, -1.0, 2.0, 0.0, 3.0, -0.25]).unwrap()
    }

    #[test]
    fn null_step_is_identity() {
        let mut m = probe();
        let mut state = AdamState::zeros(6);
        let params = AdamWParams {
            weight_decay: 0.0,
            ..Default::default()
        };
        adamw_step(&mut m, &[0.0; 6], &mut state, 1e-3, &params).unwrap();
        assert_eq!(m, probe());
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        // m̂ = G and v̂ = G² on step 1, so the update is lr·G/(|G|+ε).
        let grad = [0.3, -2.0, 5.0, -1e-3, 1.0, 7.5];
        let lr = 1e-2;
        let params = AdamWParams {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut m = probe();
        let mut state = AdamState::zeros(6);
        adamw_step(&mut m, &grad, &mut state, lr, &params).unwrap();
        for ((after, before), g) in m.weights().iter().zip(probe().weights()).zip(grad) {
            let expected = before - lr * g / (g.abs() + params.epsilon);
            assert!((after - expected).abs() < 1e-15);
            assert!(((before - after) - lr * g.signum()).abs() < 1e-4 * lr);
        }
    }

    #[test]
    fn pure_decay_shrinks_weights() {
        let lr = 1e-3;
        let params = AdamWParams::default();
        let mut m = probe();
        let mut state = AdamState::zeros(6);
        adamw_step(&mut m, &[0.0; 6], &mut state, lr, &params).unwrap();
        let factor = 1.0 - lr * params.weight_decay;
        for (after, before) in m.weights().iter().zip(probe().weights()) {
            assert!((after - before * factor).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_is_caught() {
        let mut m = probe();
        let mut state = AdamState::zeros(6);
        let grad = [f64::NAN, 0.0, 0.0, 0.0, 0.0, 0.0];
        let err = adamw_step(&mut m, &grad, &mut state, 1e-3, &AdamWParams::default());
        assert!(matches!(err, Err(ProbeError::NonFinite { step: 1 })));
    }
}
