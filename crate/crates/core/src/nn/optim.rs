use super::params::HasParams;

/// Adam with bias correction.
#[derive(Debug, Clone)]
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
    pub fn new(lr: f64, num_values: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_values],
            v: vec![0.0; num_values],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grad` is flat, in the model's parameter order.
    pub fn step<M: HasParams + ?Sized>(&mut self, model: &mut M, grad: &[f64]) {
        assert_eq!(grad.len(), self.m.len(), "gradient length mismatch");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        let mut offset = 0;
        for p in model.params_mut() {
            for v in p.value.iter_mut() {
                let g = grad[offset];
                let m = &mut self.m[offset];
                let s = &mut self.v[offset];
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *s = self.beta2 * *s + (1.0 - self.beta2) * g * g;
                *v -= self.lr * (*m / bc1) / ((*s / bc2).sqrt() + self.eps);
                offset += 1;
            }
        }
    }
}
