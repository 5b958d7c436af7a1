//! Flat parameter vectors and the handful of dense operations the rest of
//! the engine is built from.
//!
//! Every reduction runs in ascending index order on a single thread, so the
//! same inputs always produce the same bits.

use std::ops::Index;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model parameters (or a parameter delta) as a flat vector of `f64`.
///
/// All entries are finite; constructors and operations reject NaN/Inf.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("parameter vector"));
        }
        check_finite(&values, "ParamVector::new")?;
        Ok(Self(values))
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim > 0, "parameter vectors have positive dimension");
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0.0)
    }

    /// Largest absolute entry-wise difference.
    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        same_dim(self, other)?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }

    /// `self - other`.
    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        axpy(-1.0, other, self)
    }

    /// Mutable access for the optimizers. Callers must re-validate with
    /// [`ParamVector::ensure_finite`] before handing the vector out.
    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub(crate) fn ensure_finite(&self, op: &'static str) -> Result<()> {
        check_finite(&self.0, op)
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

fn check_finite(values: &[f64], op: &'static str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteResult(op))
    }
}

fn same_dim(x: &ParamVector, y: &ParamVector) -> Result<()> {
    if x.dim() == y.dim() {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            expected: y.dim(),
            actual: x.dim(),
        })
    }
}

/// `alpha * x + y`.
pub fn axpy(alpha: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
    same_dim(x, y)?;
    let out: Vec<f64> = x.0.iter().zip(&y.0).map(|(a, b)| alpha * a + b).collect();
    check_finite(&out, "axpy")?;
    Ok(ParamVector(out))
}

/// `Σ weights[i] * vectors[i]`, accumulated in ascending index order.
pub fn weighted_sum(weights: &[f64], vectors: &[&ParamVector]) -> Result<ParamVector> {
    if weights.is_empty() || vectors.is_empty() {
        return Err(Error::EmptyInput("weighted_sum"));
    }
    if weights.len() != vectors.len() {
        return Err(Error::DimensionMismatch {
            expected: vectors.len(),
            actual: weights.len(),
        });
    }
    let dim = vectors[0].dim();
    let mut out = vec![0.0; dim];
    for (&w, v) in weights.iter().zip(vectors) {
        if v.dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.dim(),
            });
        }
        for (o, x) in out.iter_mut().zip(&v.0) {
            *o += w * x;
        }
    }
    check_finite(&out, "weighted_sum")?;
    Ok(ParamVector(out))
}

/// Squared Euclidean norm.
pub fn l2_norm_sq(x: &ParamVector) -> Result<f64> {
    let s: f64 = x.0.iter().map(|v| v * v).sum();
    if s.is_finite() {
        Ok(s)
    } else {
        Err(Error::NonFiniteResult("l2_norm_sq"))
    }
}
