//! First-order optimizers driving particles along an ascent direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Adagrad { eps: f64 },
}

impl OptimizerKind {
    pub const ADAM: OptimizerKind = OptimizerKind::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };
    pub const ADAGRAD: OptimizerKind = OptimizerKind::Adagrad { eps: 1e-10 };
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    #[serde(flatten)]
    pub kind: OptimizerKind,
    pub learning_rate: f64,
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            learning_rate,
        }
    }

    pub fn adam(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::ADAM,
            learning_rate,
        }
    }

    pub fn adagrad(learning_rate: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::ADAGRAD,
            learning_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        match self.kind {
            OptimizerKind::Adam { beta1, beta2, eps }
                if !((0.0..1.0).contains(&beta1) && (0.0..1.0).contains(&beta2) && eps > 0.0) =>
            {
                Err(Error::InvalidConfig("Adam needs beta in [0, 1) and eps > 0".into()))
            }
            OptimizerKind::Adagrad { eps } if !(eps > 0.0) => Err(Error::InvalidConfig("Adagrad needs eps > 0".into())),
            _ => Ok(()),
        }
    }
}

/// Per-coordinate optimizer state for a whole ensemble.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct OptimizerState<T> {
    pub config: OptimizerConfig,
    pub t: u64,
    /// Adam first moment.
    pub first: Vec<Vec<T>>,
    /// Adam second moment or Adagrad accumulator.
    pub second: Vec<Vec<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig, m: usize, dim: usize) -> Self {
        let zeros = || vec![vec![T::zero(); dim]; m];
        let (first, second) = match config.kind {
            OptimizerKind::Sgd => (Vec::new(), Vec::new()),
            OptimizerKind::Adam { .. } => (zeros(), zeros()),
            OptimizerKind::Adagrad { .. } => (Vec::new(), zeros()),
        };
        OptimizerState {
            config,
            t: 0,
            first,
            second,
        }
    }

    /// Move `params` along the ascent direction `dirs`.
    pub fn ascend(&mut self, params: &mut [Vec<T>], dirs: &[Vec<T>]) {
        self.t += 1;
        let lr = T::of(self.config.learning_rate);
        match self.config.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(dirs) {
                    for (x, &gi) in p.iter_mut().zip(g) {
                        *x = *x + lr * gi;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(eps));
                let t = i32::try_from(self.t).unwrap_or(i32::MAX);
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                for (((p, g), m), v) in params.iter_mut().zip(dirs).zip(&mut self.first).zip(&mut self.second) {
                    for i in 0..p.len() {
                        m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                        v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                        let mh = m[i] / c1;
                        let vh = v[i] / c2;
                        p[i] = p[i] + lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Adagrad { eps } => {
                let eps = T::of(eps);
                for ((p, g), acc) in params.iter_mut().zip(dirs).zip(&mut self.second) {
                    for i in 0..p.len() {
                        acc[i] = acc[i] + g[i] * g[i];
                        p[i] = p[i] + lr * g[i] / (acc[i].sqrt() + eps);
                    }
                }
            }
        }
    }
}
