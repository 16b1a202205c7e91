//! Adam optimizer over flat lists of parameter tensors.

use ndarray::{ArrayD, ArrayViewMutD};

/// Adam with the usual bias-corrected moment estimates. Moment buffers are
/// allocated lazily on the first step, so one optimizer instance is tied to
/// one parameter list shape.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: u64,
    m: Vec<ArrayD<f32>>,
    v: Vec<ArrayD<f32>>,
}

impl Adam {
    pub fn new(learning_rate: f32) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update. `params` and `grads` must align index-by-index.
    pub fn step(&mut self, params: &mut [ArrayViewMutD<'_, f32>], grads: &[ArrayD<f32>]) {
        assert_eq!(params.len(), grads.len(), "params/grads must align");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| ArrayD::zeros(g.raw_dim())).collect();
            self.v = grads.iter().map(|g| ArrayD::zeros(g.raw_dim())).collect();
        }
        self.step += 1;
        let t = self.step as f32;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for i in 0..params.len() {
            assert_eq!(params[i].shape(), grads[i].shape(), "tensor {i} shape mismatch");
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            m.zip_mut_with(&grads[i], |mv, &g| *mv = self.beta1 * *mv + (1.0 - self.beta1) * g);
            v.zip_mut_with(&grads[i], |vv, &g| {
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * g * g
            });
            let lr = self.learning_rate;
            let eps = self.epsilon;
            ndarray::Zip::from(&mut params[i])
                .and(&*m)
                .and(&*v)
                .for_each(|p, &mv, &vv| {
                    let m_hat = mv / bc1;
                    let v_hat = vv / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }
}
