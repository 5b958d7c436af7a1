//! Gradient-based optimizers used on both sides of a round: the client
//! optimizer for local steps and the server optimizer that consumes the
//! aggregated model change as a pseudo-gradient.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    SgdMomentum,
    AdamLike,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Self::Sgd),
            "sgd-momentum" | "momentum" => Ok(Self::SgdMomentum),
            "adam-like" | "adam" => Ok(Self::AdamLike),
            _ => Err(Error::InvalidConfig(format!("unknown optimizer `{s}`"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sgd => "sgd",
            Self::SgdMomentum => "sgd-momentum",
            Self::AdamLike => "adam-like",
        })
    }
}

/// Optimizer hyperparameters. `momentum` is the heavy-ball coefficient for
/// `sgd-momentum` and beta1 for `adam-like`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSpec {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

pub type ClientOptimizerSpec = OptimizerSpec;
pub type ServerOptimizerSpec = OptimizerSpec;

impl OptimizerSpec {
    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            momentum: 0.0,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn sgd_momentum(learning_rate: f64, momentum: f64) -> Self {
        Self {
            kind: OptimizerKind::SgdMomentum,
            momentum,
            ..Self::sgd(learning_rate)
        }
    }

    pub fn adam_like(learning_rate: f64) -> Self {
        Self {
            kind: OptimizerKind::AdamLike,
            momentum: 0.9,
            ..Self::sgd(learning_rate)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        let unit = 0.0..1.0;
        if !unit.contains(&self.momentum) || !unit.contains(&self.beta2) {
            return Err(Error::InvalidConfig(
                "momentum/beta parameters must lie in [0, 1)".into(),
            ));
        }
        if self.kind == OptimizerKind::AdamLike && (self.epsilon <= 0.0 || self.epsilon.is_nan()) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Optimizer state (velocity or moment estimates) plus its spec.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimizer {
    spec: OptimizerSpec,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u64,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        })
    }

    pub fn spec(&self) -> &OptimizerSpec {
        &self.spec
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Descend along `grad` in place.
    pub fn step(&mut self, w: &mut ParamVector, grad: &ParamVector) -> Result<()> {
        if w.dim() != grad.dim() {
            return Err(Error::DimensionMismatch {
                expected: w.dim(),
                actual: grad.dim(),
            });
        }
        self.step_raw(w.values_mut(), grad.as_slice())?;
        w.ensure_finite("optimizer step")
    }

    pub(crate) fn step_raw(&mut self, w: &mut [f64], g: &[f64]) -> Result<()> {
        let dim = w.len();
        if self.first.is_empty() && self.spec.kind != OptimizerKind::Sgd {
            self.first = vec![0.0; dim];
            if self.spec.kind == OptimizerKind::AdamLike {
                self.second = vec![0.0; dim];
            }
        }
        if self.spec.kind != OptimizerKind::Sgd && self.first.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: self.first.len(),
                actual: dim,
            });
        }
        self.steps += 1;
        let lr = self.spec.learning_rate;
        let beta1 = self.spec.momentum;
        match self.spec.kind {
            OptimizerKind::Sgd => {
                for (wi, gi) in w.iter_mut().zip(g) {
                    *wi -= lr * gi;
                }
            }
            OptimizerKind::SgdMomentum => {
                for ((wi, gi), vi) in w.iter_mut().zip(g).zip(&mut self.first) {
                    *vi = beta1 * *vi + gi;
                    *wi -= lr * *vi;
                }
            }
            OptimizerKind::AdamLike => {
                let beta2 = self.spec.beta2;
                let t = self.steps as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                for (((wi, gi), m), v) in w
                    .iter_mut()
                    .zip(g)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    *m = beta1 * *m + (1.0 - beta1) * gi;
                    *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *wi -= lr * m_hat / (v_hat.sqrt() + self.spec.epsilon);
                }
            }
        }
        Ok(())
    }
}

/// One local step: returns the new parameters, mutating `state`.
pub fn client_step(
    state: &mut Optimizer,
    w: &ParamVector,
    grad: &ParamVector,
) -> Result<ParamVector> {
    let mut out = w.clone();
    state.step(&mut out, grad)?;
    Ok(out)
}

/// One server step on the aggregated change `pseudo_grad` (the positive
/// `Δw`; descent direction is applied here). With `sgd` this is
/// `w - η·Δw`.
pub fn server_step(
    state: &mut Optimizer,
    w: &ParamVector,
    pseudo_grad: &ParamVector,
) -> Result<ParamVector> {
    client_step(state, w, pseudo_grad)
}
