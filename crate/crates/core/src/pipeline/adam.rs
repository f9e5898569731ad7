//! Momentum-based adaptive gradient descent (Adam) over flat parameter
//! vectors. Both optimization stages use it: stage 1 over latent entries,
//! stage 2 over the decoder's affine parameters.

/// First/second-moment decay rates.
pub const BETAS: (f64, f64) = (0.9, 0.999);
/// Denominator guard.
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct Adam {
    step: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    updates: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    /// An optimizer with the default moment settings for `len` parameters.
    pub fn new(step: f64, len: usize) -> Self {
        assert!(step.is_finite() && step > 0.0, "step must be positive");
        Self {
            step,
            beta1: BETAS.0,
            beta2: BETAS.1,
            epsilon: EPSILON,
            updates: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn step_size(&self) -> f64 {
        self.step
    }

    /// One in-place update with bias-corrected moment estimates.
    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter count");
        assert_eq!(grad.len(), self.m.len(), "gradient count");
        self.updates += 1;
        let c1 = 1.0 - self.beta1.powi(self.updates as i32);
        let c2 = 1.0 - self.beta2.powi(self.updates as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.step * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}
