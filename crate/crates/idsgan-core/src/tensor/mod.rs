//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! Everything in the crate computes through [`Tensor`]: row-major data plus a
//! shape vector, with an optional gradient buffer. Differentiable programs are
//! recorded on a [`Tape`](tape::Tape) and replayed backward; [`adam`] applies
//! the parameter updates.

pub(crate) mod kernels;
pub mod tape;
pub mod adam;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{adam_step, AdamHyper, AdamState};
pub use tape::{Tape, Var};

/// Probabilities are clamped to `[PROB_EPSILON, 1 - PROB_EPSILON]` inside the
/// log-losses so a saturated prediction never yields a non-finite loss.
pub const PROB_EPSILON: f64 = 1e-7;

/// An n-dimensional real array, row-major, 64-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    grad: Option<Vec<f64>>,
    #[serde(default)]
    requires_grad: bool,
}

impl Tensor {
    /// Build a tensor, checking that `shape` and `data` agree.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
            grad: None,
            requires_grad: false,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
            grad: None,
            requires_grad: false,
        }
    }

    /// Uniform values in `[-limit, limit]`, drawn from a seeded stream.
    pub fn uniform(shape: Vec<usize>, limit: f64, rng: &mut ChaCha8Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        }
    }

    /// Glorot/fan-balanced uniform init: limit = sqrt(6 / (fan_in + fan_out)).
    pub fn glorot_uniform(
        shape: Vec<usize>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Self::uniform(shape, limit, rng)
    }

    /// Standard-normal values from a seeded stream.
    pub fn standard_normal(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel)
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect();
        Tensor {
            shape,
            data,
            grad: None,
            requires_grad: false,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<()> {
        if grad.len() != self.data.len() {
            return Err(Error::Shape(format!(
                "grad length {} != data length {}",
                grad.len(),
                self.data.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn with_requires_grad(mut self, flag: bool) -> Self {
        self.requires_grad = flag;
        self
    }

    /// Reinterpret the data under a new shape of equal element count.
    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                self.shape,
                self.data.len(),
                shape,
                numel
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
            grad: None,
            requires_grad: self.requires_grad,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copy of row `r`, treating the tensor as `[rows, row_len]`.
    pub fn row(&self, r: usize, row_len: usize) -> &[f64] {
        &self.data[r * row_len..(r + 1) * row_len]
    }
}

/// Elementwise activation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu { alpha: f64 },
    Sigmoid,
    Tanh,
    Softmax,
}

/// Loss kinds for [`loss`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BinaryCe,
    CategoricalCe,
}

/// Padding scheme for [`conv1d`]; only length-preserving zero padding exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Padding {
    Same,
}

fn last_two(shape: &[usize]) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::Shape(format!(
            "expected rank >= 2 tensor, got shape {shape:?}"
        )));
    }
    let c = shape[shape.len() - 1];
    let l = shape[shape.len() - 2];
    let batch = shape[..shape.len() - 2].iter().product();
    Ok((batch, l, c))
}

/// 1-D convolution over the last two axes `[..., L, C_in]` with zero 'same'
/// padding: output `[..., ceil(L/stride), C_out]`.
pub fn conv1d(
    input: &Tensor,
    kernels: &Tensor,
    bias: &Tensor,
    _padding: Padding,
    stride: usize,
) -> Result<Tensor> {
    let (batch, len, c_in) = last_two(input.shape())?;
    let dims = kernels::Conv1dDims::new(batch, len, c_in, kernels, bias, stride)?;
    let mut out_shape = input.shape().to_vec();
    let r = out_shape.len();
    out_shape[r - 2] = dims.out_len;
    out_shape[r - 1] = dims.c_out;
    let mut out = vec![0.0; batch * dims.out_len * dims.c_out];
    kernels::conv1d_forward(input.data(), kernels.data(), bias.data(), &dims, &mut out);
    Tensor::new(out_shape, out)
}

/// Affine map along the last axis: `[..., d_in] -> [..., d_out]`.
pub fn dense(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (rows, d_in, d_out) = kernels::dense_dims(input.shape(), weight.shape(), Some(bias.shape()))?;
    let mut out_shape = input.shape().to_vec();
    *out_shape.last_mut().unwrap() = d_out;
    let mut out = vec![0.0; rows * d_out];
    kernels::dense_forward(
        input.data(),
        weight.data(),
        Some(bias.data()),
        rows,
        d_in,
        d_out,
        &mut out,
    );
    Tensor::new(out_shape, out)
}

/// Elementwise activation; `Softmax` normalizes along the last axis.
pub fn activation(kind: Activation, x: &Tensor) -> Result<Tensor> {
    if !x.is_finite() {
        return Err(Error::Domain("activation input contains non-finite values".into()));
    }
    if let Activation::Softmax = kind {
        return softmax(x, x.shape().len().saturating_sub(1));
    }
    let data = x.data().iter().map(|&v| kernels::apply_unary(kind, v)).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Softmax along `axis`; rows sum to 1 and the map is shift-invariant.
pub fn softmax(logits: &Tensor, axis: usize) -> Result<Tensor> {
    if axis >= logits.shape().len() {
        return Err(Error::Shape(format!(
            "softmax axis {axis} out of range for shape {:?}",
            logits.shape()
        )));
    }
    let mut out = vec![0.0; logits.numel()];
    kernels::softmax_axis(logits.data(), logits.shape(), axis, &mut out);
    Tensor::new(logits.shape().to_vec(), out)
}

/// Per-channel mean over the length axis: `[..., L, C] -> [..., C]`.
pub fn global_avg_pool1d(x: &Tensor) -> Result<Tensor> {
    let (batch, len, c) = last_two(x.shape())?;
    if len == 0 {
        return Err(Error::Usage("global_avg_pool1d over zero-length input".into()));
    }
    let mut out = vec![0.0; batch * c];
    kernels::global_avg_pool_forward(x.data(), batch, len, c, &mut out);
    let mut shape = x.shape().to_vec();
    shape.remove(shape.len() - 2);
    Tensor::new(shape, out)
}

/// Inverted dropout: identity at inference, seeded Bernoulli mask in training.
pub fn dropout(x: &Tensor, rate: f64, training: bool, seed: u64) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Usage(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok(x.clone());
    }
    let mask = dropout_mask(x.numel(), rate, seed);
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub(crate) fn dropout_mask(n: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep_scale = 1.0 / (1.0 - rate);
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < rate {
                0.0
            } else {
                keep_scale
            }
        })
        .collect()
}

/// Mean negative log-likelihood of `probs` against `targets`.
///
/// Binary: targets share the probs shape and hold 0/1. Categorical: targets
/// are either a one-hot matrix of the probs shape or a class-index vector
/// (one integral value per probs row).
pub fn loss(kind: LossKind, probs: &Tensor, targets: &Tensor) -> Result<f64> {
    match kind {
        LossKind::BinaryCe => {
            if probs.shape() != targets.shape() {
                return Err(Error::Shape(format!(
                    "binary_ce: probs {:?} vs targets {:?}",
                    probs.shape(),
                    targets.shape()
                )));
            }
            for &t in targets.data() {
                if t != 0.0 && t != 1.0 {
                    return Err(Error::Domain(format!("binary target {t} not in {{0, 1}}")));
                }
            }
            Ok(kernels::binary_ce_forward(probs.data(), targets.data()))
        }
        LossKind::CategoricalCe => {
            let classes = *probs.shape().last().ok_or_else(|| {
                Error::Shape("categorical_ce: probs must have a class axis".into())
            })?;
            let rows = probs.numel() / classes.max(1);
            if targets.shape() == probs.shape() {
                // one-hot form
                let idx = kernels::one_hot_to_indices(targets.data(), rows, classes)?;
                Ok(kernels::categorical_ce_forward(probs.data(), &idx, classes))
            } else if targets.numel() == rows {
                let idx: Vec<usize> = targets
                    .data()
                    .iter()
                    .map(|&v| {
                        if v.fract() == 0.0 && v >= 0.0 && (v as usize) < classes {
                            Ok(v as usize)
                        } else {
                            Err(Error::Domain(format!(
                                "class index {v} invalid for {classes} classes"
                            )))
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(kernels::categorical_ce_forward(probs.data(), &idx, classes))
            } else {
                Err(Error::Shape(format!(
                    "categorical_ce: targets {:?} match neither probs shape {:?} nor row count {rows}",
                    targets.shape(),
                    probs.shape()
                )))
            }
        }
    }
}
