use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam moments and hyperparameters for one parameter buffer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub first_moment: Vec<f32>,
    pub second_moment: Vec<f32>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, learning_rate: f64) -> Self {
        AdamState {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f32], grads: &[f32], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        let g = g as f64;
        let m_new = b1 * *m as f64 + (1.0 - b1) * g;
        let v_new = b2 * *v as f64 + (1.0 - b2) * g * g;
        *m = m_new as f32;
        *v = v_new as f32;
        let update = state.learning_rate * (m_new / c1) / ((v_new / c2).sqrt() + state.epsilon);
        *p = (*p as f64 - update) as f32;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![0.5, -1.0];
        let mut s = AdamState::new(2, 0.01);
        adam_step(&mut p, &[0.0, 0.0], &mut s).unwrap();
        assert_eq!(p, vec![0.5, -1.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![1.0f32];
        let mut s = AdamState::new(1, 0.1);
        adam_step(&mut p, &[1.0], &mut s).unwrap();
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p[0] as f64 - expected).abs() < 1e-7);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let mut p = vec![0.3f32, 0.3];
        let mut s = AdamState::new(2, 0.05);
        for g in [0.7, -0.2, 1.1] {
            adam_step(&mut p, &[g, g], &mut s).unwrap();
            assert_eq!(p[0].to_bits(), p[1].to_bits());
        }
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(2, 0.1);
        assert!(adam_step(&mut [0.0], &[0.0], &mut s).is_err());
    }
}
