//! Adam with bias correction, over a flat parameter vector.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    /// Fresh state for `num_params` parameters with beta1 = 0.9,
    /// beta2 = 0.999 and epsilon = 1e-8.
    pub fn new(learning_rate: f64, num_params: usize) -> Result<Self> {
        Self::with_hyperparameters(learning_rate, 0.9, 0.999, 1e-8, num_params)
    }

    pub fn with_hyperparameters(
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        num_params: usize,
    ) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("learning rate {learning_rate}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || beta1 == 0.0 || beta2 == 0.0 {
            return Err(Error::InvalidArgument("Adam decay rates must lie in (0, 1)".into()));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidArgument(format!("epsilon {epsilon}")));
        }
        Ok(Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step_count: 0,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// Apply one update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        let n = self.first_moment.len();
        if params.len() != n || grads.len() != n {
            return Err(Error::Shape(format!(
                "optimizer holds {n} parameters, got {} parameters and {} gradients",
                params.len(),
                grads.len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = AdamState::new(0.01, 1).unwrap();
        let mut p = [1.0];
        adam.step(&mut p, &[1.0]).unwrap();
        // m_hat = 1, v_hat = 1, update = lr / (1 + eps)
        assert!((p[0] - (1.0 - 0.01 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((p[0] - 0.99).abs() < 1e-9);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut adam = AdamState::new(0.01, 3).unwrap();
        let mut p = [1.0, -2.0, 0.5];
        adam.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn shape_mismatch() {
        let mut adam = AdamState::new(0.01, 3).unwrap();
        let mut p = [0.0; 2];
        assert!(matches!(adam.step(&mut p, &[0.0; 2]), Err(Error::Shape(_))));
    }

    #[test]
    fn deterministic_sequences() {
        let run = || {
            let mut adam = AdamState::new(0.05, 2).unwrap();
            let mut p = vec![0.3, -0.7];
            let mut trace = Vec::new();
            for _ in 0..50 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x - 0.1).collect();
                adam.step(&mut p, &g).unwrap();
                trace.extend(p.iter().map(|v| v.to_bits()));
            }
            trace
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut adam = AdamState::new(0.05, 2).unwrap();
        let mut p = [3.0, -4.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0), 2.0 * (p[1] + 0.5)];
            adam.step(&mut p, &g).unwrap();
        }
        assert!((p[0] - 1.0).abs() < 1e-3 && (p[1] + 0.5).abs() < 1e-3);
        assert!(adam.second_moment().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(AdamState::new(0.0, 1).is_err());
        assert!(AdamState::with_hyperparameters(0.01, 1.0, 0.999, 1e-8, 1).is_err());
    }
}
