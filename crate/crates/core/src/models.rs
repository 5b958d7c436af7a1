//! Small differentiable models: linear regression, multinomial logistic
//! regression and a one-hidden-layer MLP.
//!
//! Parameters are stored flat, layer by layer. Each weight matrix is
//! row-major with one row per output unit, followed by that layer's bias:
//!
//! | kind                | layout                              | dim                     |
//! |---------------------|-------------------------------------|-------------------------|
//! | linear-regression   | `W[1][in]`, `b[1]`                  | `in + 1`                |
//! | logistic-regression | `W[k][in]`, `b[k]`                  | `in*k + k`              |
//! | mlp-1-hidden        | `W1[h][in]`, `b1[h]`, `W2[k][h]`, `b2[k]` | `in*h + h + h*k + k` |
//!
//! Losses are means over the batch: squared error for regression and
//! natural-log cross-entropy (log-sum-exp form) for classification.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::Split;
use crate::error::{Error, Result};
use crate::tensor::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearRegression,
    LogisticRegression,
    #[serde(rename = "mlp-1-hidden")]
    Mlp,
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear-regression" | "linear" => Ok(Self::LinearRegression),
            "logistic-regression" | "logistic" => Ok(Self::LogisticRegression),
            "mlp-1-hidden" | "mlp" => Ok(Self::Mlp),
            _ => Err(Error::InvalidSpec(format!("unknown model kind `{s}`"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LinearRegression => "linear-regression",
            Self::LogisticRegression => "logistic-regression",
            Self::Mlp => "mlp-1-hidden",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    fn derivative(self, pre: f64, out: f64) -> f64 {
        match self {
            Self::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Tanh => 1.0 - out * out,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Self::Relu),
            "tanh" => Ok(Self::Tanh),
            _ => Err(Error::InvalidSpec(format!("unknown activation `{s}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Relu => "relu",
            Self::Tanh => "tanh",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub activation: Activation,
}

impl ModelSpec {
    pub fn linear_regression(input_dim: usize) -> Self {
        Self {
            kind: ModelKind::LinearRegression,
            input_dim,
            hidden_dim: 0,
            num_classes: 1,
            activation: Activation::Relu,
        }
    }

    pub fn logistic_regression(input_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::LogisticRegression,
            input_dim,
            hidden_dim: 0,
            num_classes,
            activation: Activation::Relu,
        }
    }

    pub fn mlp(
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        activation: Activation,
    ) -> Self {
        Self {
            kind: ModelKind::Mlp,
            input_dim,
            hidden_dim,
            num_classes,
            activation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be positive".into()));
        }
        match self.kind {
            ModelKind::LinearRegression => {
                if self.num_classes != 1 {
                    return Err(Error::InvalidSpec(
                        "linear-regression has exactly one output".into(),
                    ));
                }
                if self.hidden_dim != 0 {
                    return Err(Error::InvalidSpec("hidden_dim must be 0 unless mlp".into()));
                }
            }
            ModelKind::LogisticRegression => {
                if self.num_classes < 2 {
                    return Err(Error::InvalidSpec(
                        "classification needs at least two classes".into(),
                    ));
                }
                if self.hidden_dim != 0 {
                    return Err(Error::InvalidSpec("hidden_dim must be 0 unless mlp".into()));
                }
            }
            ModelKind::Mlp => {
                if self.num_classes < 2 {
                    return Err(Error::InvalidSpec(
                        "classification needs at least two classes".into(),
                    ));
                }
                if self.hidden_dim == 0 {
                    return Err(Error::InvalidSpec(
                        "mlp-1-hidden requires hidden_dim >= 1".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn param_dim(&self) -> usize {
        let (i, h, k) = (self.input_dim, self.hidden_dim, self.num_classes);
        match self.kind {
            ModelKind::LinearRegression | ModelKind::LogisticRegression => i * k + k,
            ModelKind::Mlp => i * h + h + h * k + k,
        }
    }

    pub fn is_classification(&self) -> bool {
        self.kind != ModelKind::LinearRegression
    }

    fn check_params(&self, w: &ParamVector) -> Result<()> {
        if w.dim() != self.param_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.param_dim(),
                actual: w.dim(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Self::Classes(c) => c.len(),
            Self::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A row-major block of examples with their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    input_dim: usize,
    targets: Targets,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, input_dim: usize, targets: Targets) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::EmptyInput("batch"));
        }
        if input_dim == 0 || inputs.len() != input_dim * targets.len() {
            return Err(Error::DimensionMismatch {
                expected: input_dim * targets.len(),
                actual: inputs.len(),
            });
        }
        Ok(Self {
            inputs,
            input_dim,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    fn view(&self) -> BatchView<'_> {
        BatchView {
            inputs: &self.inputs,
            targets: match &self.targets {
                Targets::Classes(c) => TargetsRef::Classes(c),
                Targets::Values(v) => TargetsRef::Values(v),
            },
        }
    }
}

#[derive(Clone, Copy)]
pub(crate) enum TargetsRef<'a> {
    Classes(&'a [usize]),
    Values(&'a [f64]),
}

#[derive(Clone, Copy)]
pub(crate) struct BatchView<'a> {
    pub inputs: &'a [f64],
    pub targets: TargetsRef<'a>,
}

impl BatchView<'_> {
    fn len(&self) -> usize {
        match self.targets {
            TargetsRef::Classes(c) => c.len(),
            TargetsRef::Values(v) => v.len(),
        }
    }
}

/// He-initialised weights (`N(0, 2/fan_in)`), zero biases.
pub fn init_params(spec: &ModelSpec, seed: u64) -> Result<ParamVector> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Vec::with_capacity(spec.param_dim());
    let mut layer = |rows: usize, fan_in: usize, w: &mut Vec<f64>| {
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        w.extend((0..rows * fan_in).map(|_| normal.sample(&mut rng)));
        w.extend(std::iter::repeat_n(0.0, rows));
    };
    match spec.kind {
        ModelKind::LinearRegression | ModelKind::LogisticRegression => {
            layer(spec.num_classes, spec.input_dim, &mut w);
        }
        ModelKind::Mlp => {
            layer(spec.hidden_dim, spec.input_dim, &mut w);
            layer(spec.num_classes, spec.hidden_dim, &mut w);
        }
    }
    ParamVector::new(w)
}

pub fn loss(spec: &ModelSpec, w: &ParamVector, batch: &Batch) -> Result<f64> {
    check_batch(spec, w, batch)?;
    let value = evaluate(spec, w.as_slice(), batch.view(), None);
    finite(value, "loss")
}

pub fn loss_and_grad(
    spec: &ModelSpec,
    w: &ParamVector,
    batch: &Batch,
) -> Result<(f64, ParamVector)> {
    check_batch(spec, w, batch)?;
    let mut grad = vec![0.0; w.dim()];
    let value = evaluate(spec, w.as_slice(), batch.view(), Some(&mut grad));
    let grad = ParamVector::new(grad).map_err(|_| Error::NonFiniteResult("loss_and_grad"))?;
    Ok((finite(value, "loss_and_grad")?, grad))
}

fn finite(v: f64, op: &'static str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFiniteResult(op))
    }
}

fn check_batch(spec: &ModelSpec, w: &ParamVector, batch: &Batch) -> Result<()> {
    spec.validate()?;
    spec.check_params(w)?;
    if batch.input_dim != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            actual: batch.input_dim,
        });
    }
    match (&batch.targets, spec.is_classification()) {
        (Targets::Classes(c), true) => {
            if let Some(&bad) = c.iter().find(|&&c| c >= spec.num_classes) {
                return Err(Error::InvalidSpec(format!(
                    "class index {bad} out of range for {} classes",
                    spec.num_classes
                )));
            }
        }
        (Targets::Values(_), false) => {}
        (Targets::Classes(_), false) => {
            return Err(Error::InvalidSpec(
                "regression model needs real-valued targets".into(),
            ));
        }
        (Targets::Values(_), true) => return Err(Error::NotClassification),
    }
    Ok(())
}

/// Mean batch loss; accumulates the gradient of that mean into `grad` when
/// given (which must be zeroed and `param_dim` long). Inputs are assumed
/// validated.
pub(crate) fn evaluate(
    spec: &ModelSpec,
    w: &[f64],
    batch: BatchView<'_>,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let n = batch.len();
    let scale = 1.0 / n as f64;
    let d = spec.input_dim;
    let k = spec.num_classes;
    let h = spec.hidden_dim;
    let mut logits = vec![0.0; k];
    let mut dz = vec![0.0; k];
    let (mut pre, mut act, mut dh) = (vec![0.0; h], vec![0.0; h], vec![0.0; h]);
    let mut total = 0.0;

    for r in 0..n {
        let x = &batch.inputs[r * d..(r + 1) * d];
        let (out_w, out_in, out_off) = match spec.kind {
            ModelKind::Mlp => {
                let (w1, b1) = (&w[..h * d], &w[h * d..h * d + h]);
                for j in 0..h {
                    pre[j] = dot(&w1[j * d..(j + 1) * d], x) + b1[j];
                    act[j] = spec.activation.apply(pre[j]);
                }
                (&w[h * d + h..], &act[..], h * d + h)
            }
            _ => (w, x, 0),
        };
        let fan = out_in.len();
        for c in 0..k {
            logits[c] = dot(&out_w[c * fan..(c + 1) * fan], out_in) + out_w[k * fan + c];
        }

        let example_loss = match batch.targets {
            TargetsRef::Values(y) => {
                let err = logits[0] - y[r];
                dz[0] = 2.0 * err * scale;
                err * err
            }
            TargetsRef::Classes(y) => {
                let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for (p, &z) in dz.iter_mut().zip(&logits) {
                    *p = (z - max).exp();
                    sum += *p;
                }
                let lse = max + sum.ln();
                for p in dz.iter_mut() {
                    *p *= scale / sum;
                }
                dz[y[r]] -= scale;
                lse - logits[y[r]]
            }
        };
        total += example_loss;

        let Some(g) = grad.as_deref_mut() else {
            continue;
        };
        let g_out = &mut g[out_off..];
        for c in 0..k {
            axpy_into(dz[c], out_in, &mut g_out[c * fan..(c + 1) * fan]);
            g_out[k * fan + c] += dz[c];
        }
        if spec.kind == ModelKind::Mlp {
            dh.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..k {
                axpy_into(dz[c], &out_w[c * h..(c + 1) * h], &mut dh);
            }
            for j in 0..h {
                let dpre = dh[j] * spec.activation.derivative(pre[j], act[j]);
                axpy_into(dpre, x, &mut g[j * d..(j + 1) * d]);
                g[h * d + j] += dpre;
            }
        }
    }
    total * scale
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy_into(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn logits_into(spec: &ModelSpec, w: &[f64], x: &[f64], hidden: &mut [f64], logits: &mut [f64]) {
    let (d, h, k) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
    let (out_w, out_in): (&[f64], &[f64]) = match spec.kind {
        ModelKind::Mlp => {
            for j in 0..h {
                hidden[j] = spec
                    .activation
                    .apply(dot(&w[j * d..(j + 1) * d], x) + w[h * d + j]);
            }
            (&w[h * d + h..], hidden)
        }
        _ => (w, x),
    };
    let fan = out_in.len();
    for c in 0..k {
        logits[c] = dot(&out_w[c * fan..(c + 1) * fan], out_in) + out_w[k * fan + c];
    }
}

/// Index of the largest logit; ties go to the lowest class index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &z) in logits.iter().enumerate().skip(1) {
        if z > logits[best] {
            best = i;
        }
    }
    best
}

/// Raw output scores for one example.
pub fn logits(spec: &ModelSpec, w: &ParamVector, x: &[f64]) -> Result<Vec<f64>> {
    spec.validate()?;
    spec.check_params(w)?;
    if x.len() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            actual: x.len(),
        });
    }
    let mut hidden = vec![0.0; spec.hidden_dim];
    let mut out = vec![0.0; spec.num_classes];
    logits_into(spec, w.as_slice(), x, &mut hidden, &mut out);
    Ok(out)
}

/// Number of examples in `split` whose predicted class equals the label.
pub fn correct_count(spec: &ModelSpec, w: &ParamVector, split: &Split) -> Result<usize> {
    if !spec.is_classification() {
        return Err(Error::NotClassification);
    }
    spec.validate()?;
    spec.check_params(w)?;
    if split.input_dim() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            expected: spec.input_dim,
            actual: split.input_dim(),
        });
    }
    let mut hidden = vec![0.0; spec.hidden_dim];
    let mut out = vec![0.0; spec.num_classes];
    let mut correct = 0;
    for i in 0..split.len() {
        logits_into(spec, w.as_slice(), split.row(i), &mut hidden, &mut out);
        if argmax(&out) == split.labels()[i] {
            correct += 1;
        }
    }
    Ok(correct)
}

/// Fraction of exact class matches on `split`.
pub fn accuracy(spec: &ModelSpec, w: &ParamVector, split: &Split) -> Result<f64> {
    let correct = correct_count(spec, w, split)?;
    if split.is_empty() {
        return Err(Error::EmptyInput("accuracy split"));
    }
    Ok(correct as f64 / split.len() as f64)
}
