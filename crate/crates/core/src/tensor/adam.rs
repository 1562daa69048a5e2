//! Adaptive moment estimation updates over parameter tensors.

use super::{Tensor, TensorError};

/// Optimizer state: one first/second-moment accumulator per parameter.
#[derive(Debug, Clone)]
pub struct AdamState {
    step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    /// State with the standard moment coefficients and the training
    /// protocol's default learning rate of 1e-4.
    pub fn new(params: &[Tensor]) -> Self {
        Self::with_learning_rate(params, 1e-4)
    }

    pub fn with_learning_rate(params: &[Tensor], learning_rate: f64) -> Self {
        AdamState {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected update. Every parameter must carry a populated
/// gradient; gradients are cleared afterwards so stale accumulation across
/// steps is impossible.
pub fn adam_step(params: &mut [Tensor], state: &mut AdamState) -> Result<(), TensorError> {
    assert_eq!(params.len(), state.m.len(), "state built for a different parameter set");
    for (i, p) in params.iter().enumerate() {
        match p.grad() {
            None => return Err(TensorError::MissingGradient(i)),
            Some(g) => assert_eq!(g.len(), state.m[i].len(), "state shape drifted"),
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = p.grad().expect("checked above").to_vec();
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        let data = p.data_mut();
        for j in 0..g.len() {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            data[j] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
        p.clear_grad();
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut params = vec![Tensor::new(&[3], &[1.0, -2.0, 0.25], true).unwrap()];
        let before = params[0].data().to_vec();
        let mut state = AdamState::with_learning_rate(&params, 0.1);
        params[0].accumulate_grad(&[0.0, 0.0, 0.0]);
        adam_step(&mut params, &mut state).unwrap();
        assert_eq!(params[0].data(), &before[..]);
        assert_eq!(state.step_count(), 1);
        assert!(params[0].grad().is_none());
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // Bias correction makes the first update ~ lr * g / (|g| + eps).
        let mut params = vec![Tensor::new(&[1], &[1.0], true).unwrap()];
        let mut state = AdamState::with_learning_rate(&params, 0.1);
        params[0].accumulate_grad(&[1.0]);
        adam_step(&mut params, &mut state).unwrap();
        let moved = 1.0 - params[0].data()[0];
        assert!((moved - 0.1).abs() < 1e-8, "moved {}", moved);
    }

    #[test]
    fn identical_gradients_decrease_monotonically() {
        let mut params = vec![Tensor::new(&[1], &[0.5], true).unwrap()];
        let mut state = AdamState::with_learning_rate(&params, 0.05);
        let mut prev = params[0].data()[0];
        for _ in 0..2 {
            params[0].accumulate_grad(&[2.0]);
            adam_step(&mut params, &mut state).unwrap();
            let now = params[0].data()[0];
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut params = vec![Tensor::new(&[1], &[1.0], true).unwrap()];
        let mut state = AdamState::new(&params);
        assert!(matches!(
            adam_step(&mut params, &mut state),
            Err(TensorError::MissingGradient(0))
        ));
    }
}
