use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Optimizer {
    pub fn learning_rate(&self) -> f64 {
        match *self {
            Optimizer::Sgd { lr } | Optimizer::Adam { lr, .. } => lr,
        }
    }

    pub fn with_learning_rate(self, lr: f64) -> Self {
        match self {
            Optimizer::Sgd { .. } => Optimizer::Sgd { lr },
            Optimizer::Adam { beta1, beta2, eps, .. } => Optimizer::Adam { lr, beta1, beta2, eps },
        }
    }

    pub(crate) fn state(&self, sizes: &[usize]) -> OptimState {
        let zeros = || sizes.iter().map(|&n| vec![0.0; n]).collect();
        OptimState {
            opt: *self,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

pub(crate) struct OptimState {
    opt: Optimizer,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimState {
    pub(crate) fn begin_step(&mut self) {
        self.t += 1;
    }

    /// Updates one parameter tensor; `slot` is its index in the layout.
    pub(crate) fn update(&mut self, slot: usize, param: &mut [f64], grad: &[f64]) {
        match self.opt {
            Optimizer::Sgd { lr } => {
                param.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g);
            }
            Optimizer::Adam { lr, beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.t);
                let c2 = 1.0 - beta2.powi(self.t);
                let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
                for i in 0..param.len() {
                    let g = grad[i];
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                    param[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}
