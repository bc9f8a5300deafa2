use serde::{Deserialize, Serialize};

use super::config::OptimConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `p ← p − η·g`.
pub fn sgd_step(param: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
    if param.shape() != grad.shape() {
        return Err(Error::Shape {
            op: "sgd_step",
            lhs: param.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    Adam,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// SGD with optional heavy-ball momentum, or Adam; state buffers are
/// created on the first step.
#[derive(Clone, Debug)]
pub struct Optimizer {
    pub lr: f64,
    pub momentum: f64,
    pub kind: OptimizerKind,
    velocity: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: i32,
}

impl Optimizer {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Optimizer {
            lr,
            momentum,
            kind: OptimizerKind::Sgd,
            velocity: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn adam(lr: f64) -> Self {
        Optimizer {
            kind: OptimizerKind::Adam,
            ..Optimizer::new(lr, 0.0)
        }
    }

    pub fn from_config(cfg: &OptimConfig) -> Self {
        match cfg.optimizer {
            OptimizerKind::Sgd => Optimizer::new(cfg.lr, cfg.momentum),
            OptimizerKind::Adam => Optimizer::adam(cfg.lr),
        }
    }

    fn adam_step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if self.velocity.is_empty() {
            self.velocity = zeros_like(grads)?;
            self.second = zeros_like(grads)?;
        }
        self.steps += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.steps);
        let c2 = 1.0 - ADAM_BETA2.powi(self.steps);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.velocity).zip(&mut self.second) {
            if p.shape() != g.shape() || m.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            let pd = p.data_mut();
            for (k, &gi) in g.data().iter().enumerate() {
                let mk = &mut m.data_mut()[k];
                *mk = ADAM_BETA1 * *mk + (1.0 - ADAM_BETA1) * gi;
                let mhat = *mk / c1;
                let vk = &mut v.data_mut()[k];
                *vk = ADAM_BETA2 * *vk + (1.0 - ADAM_BETA2) * gi * gi;
                let vhat = *vk / c2;
                pd[k] -= self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Contract(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.kind == OptimizerKind::Adam {
            return self.adam_step(params, grads);
        }
        if self.momentum == 0.0 {
            for (p, g) in params.into_iter().zip(grads) {
                sgd_step(p, g, self.lr)?;
            }
            return Ok(());
        }
        if self.velocity.is_empty() {
            self.velocity = zeros_like(grads)?;
        }
        for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.velocity) {
            if v.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "sgd_step",
                    lhs: v.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
            for (vi, gi) in v.data_mut().iter_mut().zip(g.data()) {
                *vi = self.momentum * *vi + gi;
            }
            sgd_step(p, v, self.lr)?;
        }
        Ok(())
    }
}

fn zeros_like(ts: &[Tensor]) -> Result<Vec<Tensor>> {
    ts.iter()
        .map(|g| Tensor::new(g.shape().to_vec(), vec![0.0; g.numel()]))
        .collect()
}
