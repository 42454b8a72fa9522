//! Adaptive-moment gradient descent shared by cage fitting, classifier
//! training, and the attacks.

/// Adam optimiser state over a flat `f64` parameter vector.
///
/// The three consumers in this crate (cage vertex fitting, network
/// training, cage-offset attacks) all drive it the same way: build one
/// state per parameter block, then call [`Adam::update`] once per
/// iteration with the current gradient.
#[derive(Debug, Clone)]
pub struct Adam {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    /// Standard coefficients (`beta1 = 0.9`, `beta2 = 0.999`,
    /// `epsilon = 1e-8`) with a caller-chosen step size.
    pub fn new(dim: usize, step: f64) -> Self {
        Self {
            step,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    /// One bias-corrected update step in place.
    ///
    /// # Panics
    ///
    /// Panics if `params` or `grad` length differs from the state
    /// dimension — that is always a programming error, not a data error.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter dimension mismatch");
        assert_eq!(grad.len(), self.m.len(), "gradient dimension mismatch");

        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);

        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.step * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_is_signed_step_size() {
        // With bias correction, step 1 moves each coordinate by almost
        // exactly `step` against the gradient sign.
        let mut p = vec![1.0, -2.0];
        let mut adam = Adam::new(2, 0.1);
        adam.update(&mut p, &[3.0, -0.5]);
        assert!((p[0] - (1.0 - 0.1)).abs() < 1e-6);
        assert!((p[1] - (-2.0 + 0.1)).abs() < 1e-6);
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut p = vec![4.0, -3.0, 0.5];
        let mut adam = Adam::new(3, 0.05);
        for _ in 0..2000 {
            let grad: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
            adam.update(&mut p, &grad);
        }
        for x in &p {
            assert!(x.abs() < 1e-3, "did not converge: {p:?}");
        }
    }
}
