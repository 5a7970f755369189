//! Row-sparse first-order optimizers.
//!
//! Parameters live in `f32` blocks; gradients arrive in `f64` per row. Only
//! rows with a gradient in the current step are touched. Adam keeps its
//! moments per touched row and uses the global step count for bias
//! correction (the sparse-Adam convention for embedding tables).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Default)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Identifies a parameter row: (block, row index).
pub type RowKey = (u8, u32);

#[derive(Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    weight_decay: f64,
    step: u64,
    moments: HashMap<RowKey, Moments>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            weight_decay: 0.0,
            step: 0,
            moments: HashMap::new(),
        }
    }

    /// Decoupled decay, applied to a row only when that row is updated.
    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Starts a new step; call once before the row updates of that step.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, key: RowKey, params: &mut [f32], grad: &[f64]) {
        debug_assert_eq!(params.len(), grad.len());
        let lr = self.learning_rate;
        if self.weight_decay != 0.0 && lr != 0.0 {
            let keep = 1.0 - lr * self.weight_decay;
            params.iter_mut().for_each(|p| *p = (f64::from(*p) * keep) as f32);
        }
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p = (f64::from(*p) - lr * g) as f32;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let t = self.step.max(1) as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let state = self.moments.entry(key).or_insert_with(|| Moments {
                    m: vec![0.0; grad.len()],
                    v: vec![0.0; grad.len()],
                });
                for (i, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
                    let m = beta1 * state.m[i] + (1.0 - beta1) * g;
                    let v = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                    state.m[i] = m;
                    state.v[i] = v;
                    let step = lr * (m / c1) / ((v / c2).sqrt() + eps);
                    *p = (f64::from(*p) - step) as f32;
                }
            }
        }
    }
}
