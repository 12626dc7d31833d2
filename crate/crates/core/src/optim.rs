//! Adam over a flat parameter vector, shared by the neural network and the
//! sparse GP trainers.

use serde::{Deserialize, Serialize};

/// First/second moment accumulators and step count; beta1=0.9, beta2=0.999,
/// epsilon=1e-8.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// One descent step in place: `params -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_step_matches_closed_form() {
        let mut state = AdamState::new(2);
        let mut params = vec![1.0, -2.0];
        let grads = vec![0.3, -0.7];
        let lr = 0.01;
        state.step(&mut params, &grads, lr);

        for (i, (&p0, &g)) in [1.0, -2.0].iter().zip(grads.iter()).enumerate() {
            let m = 0.1 * g;
            let v = 0.001 * g * g;
            let m_hat = m / (1.0 - 0.9);
            let v_hat = v / (1.0 - 0.999);
            let expect = p0 - lr * m_hat / (v_hat.sqrt() + 1e-8);
            assert_abs_diff_eq!(params[i], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_steps_track_moments() {
        let mut state = AdamState::new(1);
        let mut params = vec![0.5];
        state.step(&mut params, &[1.0], 0.1);
        state.step(&mut params, &[-1.0], 0.1);

        let m1 = 0.1_f64;
        let v1 = 0.001_f64;
        let p1 = 0.5 - 0.1 * (m1 / 0.1) / ((v1 / 0.001).sqrt() + 1e-8);
        let m2 = 0.9 * m1 + 0.1 * (-1.0);
        let v2 = 0.999 * v1 + 0.001;
        let m_hat = m2 / (1.0 - 0.81);
        let v_hat = v2 / (1.0 - 0.999f64 * 0.999);
        let p2 = p1 - 0.1 * m_hat / (v_hat.sqrt() + 1e-8);
        assert_abs_diff_eq!(params[0], p2, epsilon = 1e-12);
    }
}
