use crate::error::{check_dim, Result};

/// Adam optimizer state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One descent step on `params` along `grad`.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        check_dim(self.m.len(), params.len())?;
        check_dim(self.m.len(), grad.len())?;
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut adam = Adam::new(2, 1e-3);
        let mut p = vec![1.0, -2.0];
        adam.step(&mut p, &[0.5, -0.5]).unwrap();
        let after_first = p.clone();
        let m_before = adam.first_moment().to_vec();
        adam.step(&mut p, &[0.0, 0.0]).unwrap();
        // the bias-corrected first moment is still non-zero, so params move;
        // moments themselves must decay by beta1 exactly
        assert_eq!(adam.first_moment()[0], 0.9 * m_before[0]);
        assert_ne!(p, after_first);
        assert_eq!(adam.step_count(), 2);

        let mut fresh = Adam::new(2, 1e-3);
        let mut q = vec![1.0, -2.0];
        fresh.step(&mut q, &[0.0, 0.0]).unwrap();
        assert_eq!(q, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut adam = Adam::new(3, 0.01);
        let mut p = vec![0.0; 3];
        adam.step(&mut p, &[3.0, -0.2, 1e-3]).unwrap();
        for (pi, s) in p.iter().zip([-1.0, 1.0, -1.0]) {
            assert!((pi - s * 0.01).abs() < 1e-7, "{pi}");
        }
    }

    #[test]
    fn length_mismatch() {
        let mut adam = Adam::new(2, 0.1);
        assert!(adam.step(&mut [0.0, 0.0], &[1.0]).is_err());
    }
}
