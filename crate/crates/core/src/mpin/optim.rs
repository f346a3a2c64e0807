//! Adam with decoupled weight decay.
//!
//! Decay shrinks weight matrices directly (`p -= lr·wd·p`) and never touches
//! biases; the adaptive update uses bias-corrected first and second moments.

use super::ModelState;

#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: i32,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelState, grads: &ModelState) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let mut slot = 0;
        for (layer, grad) in params.layers_mut().into_iter().zip(grads.layers()) {
            for ((_, p, is_matrix), (_, g, _)) in layer.slices_mut().into_iter().zip(grad.slices()) {
                if self.first.len() <= slot {
                    self.first.push(vec![0.0; p.len()]);
                    self.second.push(vec![0.0; p.len()]);
                }
                let (m, v) = (&mut self.first[slot], &mut self.second[slot]);
                for i in 0..p.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                    if is_matrix {
                        p[i] -= self.learning_rate * self.weight_decay * p[i];
                    }
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                }
                slot += 1;
            }
        }
    }
}
