//! Optimizers over the compressed array. State vectors are sized m (the
//! store length), never the logical parameter count: optimizer cost scales
//! with the compressed memory, not the recovered model.

use crate::error::{Error, Result};
use crate::store::CompressedStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adagrad,
    Adam,
}

impl OptimizerKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "sgd" => Ok(Self::Sgd),
            "adagrad" => Ok(Self::Adagrad),
            "adam" => Ok(Self::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Sgd => "sgd",
            Self::Adagrad => "adagrad",
            Self::Adam => "adam",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            beta1: 0.0,
            beta2: 0.0,
            eps: 0.0,
        }
    }

    pub fn adagrad(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adagrad,
            learning_rate,
            beta1: 0.0,
            beta2: 0.0,
            eps: 1e-10,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Toy-scale defaults per optimizer kind.
    pub fn default_for(kind: OptimizerKind) -> Self {
        match kind {
            OptimizerKind::Sgd => Self::sgd(1e-2),
            OptimizerKind::Adagrad => Self::adagrad(1e-2),
            OptimizerKind::Adam => Self::adam(1e-3),
        }
    }
}

/// Optimizer with state sized to the store.
#[derive(Clone, Debug)]
pub struct Optimizer {
    config: OptimizerConfig,
    /// First moment (Adam); unused for SGD/Adagrad.
    m1: Vec<f64>,
    /// Second moment (Adam) or squared-gradient accumulator (Adagrad).
    m2: Vec<f64>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, m: usize) -> Self {
        let state = match config.kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adagrad | OptimizerKind::Adam => m,
        };
        let m1 = match config.kind {
            OptimizerKind::Adam => vec![0.0; m],
            _ => Vec::new(),
        };
        Self {
            config,
            m1,
            m2: vec![0.0; state],
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    /// Squared-gradient accumulator (Adagrad) for inspection in tests.
    pub fn accumulator(&self) -> &[f64] {
        &self.m2
    }

    /// Applies one update over exactly the m store slots. `step_index` is
    /// 1-based and drives Adam's bias correction.
    pub fn step(&mut self, store: &mut CompressedStore, step_index: usize) {
        let lr = self.config.learning_rate;
        match self.config.kind {
            OptimizerKind::Sgd => {
                let (values, grads) = store.values_and_grads_mut();
                for (v, g) in values.iter_mut().zip(grads.iter()) {
                    *v -= lr * g;
                }
            }
            OptimizerKind::Adagrad => {
                let eps = self.config.eps;
                let (values, grads) = store.values_and_grads_mut();
                for ((v, g), acc) in values.iter_mut().zip(grads.iter()).zip(self.m2.iter_mut()) {
                    *acc += g * g;
                    *v -= lr * g / (acc.sqrt() + eps);
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2, eps) = (self.config.beta1, self.config.beta2, self.config.eps);
                let t = step_index.max(1) as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let (values, grads) = store.values_and_grads_mut();
                for (((v, g), m1), m2) in values
                    .iter_mut()
                    .zip(grads.iter())
                    .zip(self.m1.iter_mut())
                    .zip(self.m2.iter_mut())
                {
                    *m1 = b1 * *m1 + (1.0 - b1) * g;
                    *m2 = b2 * *m2 + (1.0 - b2) * g * g;
                    let mhat = *m1 / c1;
                    let vhat = *m2 / c2;
                    *v -= lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
    }
}

/// Dense parameter tensor with the same update rules, for plain biases and
/// the uncompressed reference model.
#[derive(Clone, Debug)]
pub struct DenseParam {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    m1: Vec<f64>,
    m2: Vec<f64>,
}

impl DenseParam {
    pub fn new(values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            values,
            grads: vec![0.0; n],
            m1: vec![0.0; n],
            m2: vec![0.0; n],
        }
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn step(&mut self, config: &OptimizerConfig, step_index: usize) {
        let lr = config.learning_rate;
        match config.kind {
            OptimizerKind::Sgd => {
                for (v, g) in self.values.iter_mut().zip(&self.grads) {
                    *v -= lr * g;
                }
            }
            OptimizerKind::Adagrad => {
                for ((v, g), acc) in self
                    .values
                    .iter_mut()
                    .zip(&self.grads)
                    .zip(self.m2.iter_mut())
                {
                    *acc += g * g;
                    *v -= lr * g / (acc.sqrt() + config.eps);
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (config.beta1, config.beta2);
                let t = step_index.max(1) as i32;
                let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                for (((v, g), m1), m2) in self
                    .values
                    .iter_mut()
                    .zip(&self.grads)
                    .zip(self.m1.iter_mut())
                    .zip(self.m2.iter_mut())
                {
                    *m1 = b1 * *m1 + (1.0 - b1) * g;
                    *m2 = b2 * *m2 + (1.0 - b2) * g * g;
                    *v -= lr * (*m1 / c1) / ((*m2 / c2).sqrt() + config.eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::SharingMode;

    fn store_with_grads(grads: &[f64]) -> CompressedStore {
        let mut store = CompressedStore::create(grads.len(), 1.0, 1, SharingMode::Global).unwrap();
        store.grads_mut().copy_from_slice(grads);
        store
    }

    #[test]
    fn sgd_moves_against_gradient() {
        let mut store = store_with_grads(&[1.0, -2.0, 0.5, 0.0]);
        let before = store.values().to_vec();
        let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1), 4);
        opt.step(&mut store, 1);
        for ((v, b), g) in store
            .values()
            .iter()
            .zip(&before)
            .zip([1.0, -2.0, 0.5, 0.0])
        {
            assert!((v - (b - 0.1 * g)).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_with_zero_grads_changes_nothing() {
        let mut store = store_with_grads(&[0.0; 8]);
        let before = store.values().to_vec();
        let mut opt = Optimizer::new(OptimizerConfig::adam(1e-3), 8);
        for step in 1..=5 {
            opt.step(&mut store, step);
        }
        assert_eq!(store.values(), &before[..]);
    }

    #[test]
    fn adagrad_accumulator_is_nondecreasing() {
        let mut store = store_with_grads(&[0.3, -0.7, 0.0]);
        let mut opt = Optimizer::new(OptimizerConfig::adagrad(0.1), 3);
        let mut prev = opt.accumulator().to_vec();
        for step in 1..=4 {
            store.grads_mut().copy_from_slice(&[0.3, -0.7, 0.0]);
            opt.step(&mut store, step);
            for (p, a) in prev.iter().zip(opt.accumulator()) {
                assert!(a >= p);
            }
            prev = opt.accumulator().to_vec();
        }
    }

    #[test]
    fn optimizer_kind_parsing() {
        assert_eq!(OptimizerKind::parse("adam").unwrap(), OptimizerKind::Adam);
        assert!(OptimizerKind::parse("adamw").is_err());
    }
}
