use serde::{Deserialize, Serialize};

use super::{GradientSet, ModelParams};

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl OptimizerState {
    pub fn new(params: &ModelParams, lr: f64) -> Self {
        let mut zeros = params.clone();
        zeros.tensors.values_mut().for_each(|t| t.data_mut().fill(0.0));
        OptimizerState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: zeros.clone(), v: zeros }
    }

    /// One bias-corrected Adam update. Parameters without a gradient entry
    /// are left untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &GradientSet) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (path, p) in params.tensors.iter_mut() {
            let Some(g) = grads.tensors.get(path) else { continue };
            let m = self.m.tensors.get_mut(path).expect("moment shapes mirror params");
            let v = self.v.tensors.get_mut(path).expect("moment shapes mirror params");
            for (((pi, gi), mi), vi) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}
