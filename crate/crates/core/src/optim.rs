//! First-order optimizers over a [`ParamStore`]. Frozen tensors are skipped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd {
        #[serde(default)]
        momentum: f64,
    },
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Sgd { momentum: 0.0 }
    }
}

/// Learning-rate schedule over a stage's planned step budget.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Decays linearly from the base rate to zero at the last planned step.
    Linear,
}

impl LrSchedule {
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Linear => base * (1.0 - step as f64 / total.max(1) as f64).max(0.0),
        }
    }
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_adam_eps(),
        }
    }
}

pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    grad_clip: Option<f64>,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, grad_clip: Option<f64>, store: &ParamStore) -> Result<Self> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {lr}"
            )));
        }
        let zeros = || {
            store
                .ids()
                .map(|id| vec![0.0; store.get(id).numel()])
                .collect::<Vec<_>>()
        };
        Ok(Self {
            kind,
            lr,
            grad_clip,
            step: 0,
            first: zeros(),
            second: zeros(),
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Global L2 norm over trainable gradients.
    pub fn grad_norm(store: &ParamStore) -> f64 {
        store
            .ids()
            .map(|id| store.get(id))
            .filter(|t| t.requires_grad())
            .flat_map(|t| t.grad().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        self.step += 1;
        let scale = match self.grad_clip {
            Some(max) => {
                let norm = Self::grad_norm(store);
                if !norm.is_finite() {
                    return Err(Error::Numeric {
                        op: "optimizer",
                        detail: "non-finite gradient norm".into(),
                    });
                }
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let k = id.index();
            let t = store.get_mut(id);
            if !t.requires_grad() {
                t.zero_grad();
                continue;
            }
            let grad: Vec<f64> = t.grad().iter().map(|g| g * scale).collect();
            match self.kind {
                OptimizerKind::Sgd { momentum } => {
                    let vel = &mut self.first[k];
                    for ((v, m), g) in t.values_mut().iter_mut().zip(vel.iter_mut()).zip(&grad) {
                        *m = momentum * *m + g;
                        *v -= self.lr * *m;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let bc1 = 1.0 - beta1.powi(self.step as i32);
                    let bc2 = 1.0 - beta2.powi(self.step as i32);
                    let (m1, m2) = (&mut self.first[k], &mut self.second[k]);
                    for (i, (v, g)) in t.values_mut().iter_mut().zip(&grad).enumerate() {
                        m1[i] = beta1 * m1[i] + (1.0 - beta1) * g;
                        m2[i] = beta2 * m2[i] + (1.0 - beta2) * g * g;
                        let mhat = m1[i] / bc1;
                        let vhat = m2[i] / bc2;
                        *v -= self.lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
            t.zero_grad();
        }
        Ok(())
    }
}
