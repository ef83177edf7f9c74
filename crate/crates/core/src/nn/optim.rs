use serde::{Deserialize, Serialize};

use super::{ParamMut, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// First-order optimizer with optional L2 decay on weight matrices.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    l2: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, l2: f64) -> Self {
        Self {
            kind,
            lr,
            l2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, model: &mut dyn Parameterized) {
        self.step += 1;
        let t = self.step as i32;
        let (lr, l2, b1, b2, eps, kind) = (self.lr, self.l2, self.beta1, self.beta2, self.eps, self.kind);
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        let first = &mut self.first;
        let second = &mut self.second;
        let mut slot = 0usize;
        model.visit_params(&mut |p: ParamMut<'_>| {
            let decay = if p.decay { l2 } else { 0.0 };
            match kind {
                OptimizerKind::Sgd => {
                    for (w, &g) in p.value.iter_mut().zip(p.grad) {
                        *w -= lr * (g + decay * *w);
                    }
                }
                OptimizerKind::Adam => {
                    if first.len() <= slot {
                        first.push(vec![0.0; p.value.len()]);
                        second.push(vec![0.0; p.value.len()]);
                    }
                    let (m, v) = (&mut first[slot], &mut second[slot]);
                    for i in 0..p.value.len() {
                        let g = p.grad[i] + decay * p.value[i];
                        m[i] = b1 * m[i] + (1.0 - b1) * g;
                        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                        let m_hat = m[i] / bias1;
                        let v_hat = v[i] / bias2;
                        p.value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
            slot += 1;
        });
    }
}
