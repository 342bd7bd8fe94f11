//! Attention: softmax-normalized alignment scores over value rows, emitting
//! a context vector per query row.
//!
//! The default mode scores queries against values with a single learned
//! scalar scale (one parameter). The additive mode scores through a small
//! feedforward alignment network instead.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{Activation, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionMode {
    ScaledDot,
    Additive,
}

/// Learned attention parameters; the variant selects the mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionParams {
    ScaledDot {
        /// Scalar multiplier on the dot-product scores.
        scale: Tensor,
    },
    Additive {
        w_query: Tensor,
        w_value: Tensor,
        v_align: Tensor,
    },
}

impl AttentionParams {
    /// Fresh parameters for feature width `d`. The scalar scale starts at 1;
    /// alignment matrices use fan-balanced uniform init.
    pub fn init(mode: AttentionMode, d: usize, rng: &mut ChaCha8Rng) -> Self {
        match mode {
            AttentionMode::ScaledDot => AttentionParams::ScaledDot {
                scale: Tensor::scalar(1.0),
            },
            AttentionMode::Additive => AttentionParams::Additive {
                w_query: Tensor::glorot_uniform(vec![d, d], d, d, rng),
                w_value: Tensor::glorot_uniform(vec![d, d], d, d, rng),
                v_align: Tensor::glorot_uniform(vec![d, 1], d, 1, rng),
            },
        }
    }

    pub fn mode(&self) -> AttentionMode {
        match self {
            AttentionParams::ScaledDot { .. } => AttentionMode::ScaledDot,
            AttentionParams::Additive { .. } => AttentionMode::Additive,
        }
    }

    pub fn named(&self) -> Vec<(&'static str, &Tensor)> {
        match self {
            AttentionParams::ScaledDot { scale } => vec![("scale", scale)],
            AttentionParams::Additive {
                w_query,
                w_value,
                v_align,
            } => vec![
                ("w_query", w_query),
                ("w_value", w_value),
                ("v_align", v_align),
            ],
        }
    }
}

/// Parameter handles once the attention parameters are on a tape.
pub(crate) enum AttentionVars {
    ScaledDot { scale: Var },
    Additive { w_query: Var, w_value: Var, v_align: Var },
}

impl AttentionVars {
    pub(crate) fn record(tape: &mut Tape, params: &AttentionParams) -> (Self, Vec<Var>) {
        match params {
            AttentionParams::ScaledDot { scale } => {
                let s = tape.leaf(scale.clone());
                (AttentionVars::ScaledDot { scale: s }, vec![s])
            }
            AttentionParams::Additive {
                w_query,
                w_value,
                v_align,
            } => {
                let wq = tape.leaf(w_query.clone());
                let wv = tape.leaf(w_value.clone());
                let va = tape.leaf(v_align.clone());
                (
                    AttentionVars::Additive { w_query: wq, w_value: wv, v_align: va },
                    vec![wq, wv, va],
                )
            }
        }
    }
}

/// Attention over taped tensors: query `[..., T_q, d]`, value `[..., T_v, d]`.
/// Returns (context `[..., T_q, d]`, weights `[..., T_q, T_v]`).
pub(crate) fn attention_on_tape(
    tape: &mut Tape,
    query: Var,
    value: Var,
    vars: &AttentionVars,
) -> Result<(Var, Var)> {
    let weights = match vars {
        AttentionVars::ScaledDot { scale } => {
            let scores = tape.matmul(query, value, true)?;
            let scaled = tape.scale_by(scores, *scale)?;
            let axis = tape.value(scaled).shape().len() - 1;
            tape.softmax(scaled, axis)?
        }
        AttentionVars::Additive { w_query, w_value, v_align } => {
            let sq = tape.dense(query, *w_query, None)?;
            let sv = tape.dense(value, *w_value, None)?;
            let pairs = tape.pairwise_sum(sq, sv)?;
            let th = tape.unary(Activation::Tanh, pairs)?;
            let scores = tape.dense(th, *v_align, None)?;
            let mut squeezed = tape.value(scores).shape().to_vec();
            squeezed.pop();
            let scores = tape.reshape(scores, squeezed)?;
            let axis = tape.value(scores).shape().len() - 1;
            tape.softmax(scores, axis)?
        }
    };
    let context = tape.matmul(weights, value, false)?;
    Ok((context, weights))
}

/// Context vector and attention weights for `query` against `value`.
///
/// Weight rows are softmax distributions over the `T_v` value positions;
/// context row `i` is the weight-averaged sum of value rows.
pub fn attention(
    query: &Tensor,
    value: &Tensor,
    params: &AttentionParams,
) -> Result<(Tensor, Tensor)> {
    let (qs, vs) = (query.shape(), value.shape());
    if qs.len() < 2 || vs.len() < 2 {
        return Err(Error::Shape(format!(
            "attention operands must be [..., T, d], got {qs:?} and {vs:?}"
        )));
    }
    if qs[qs.len() - 1] != vs[vs.len() - 1] {
        return Err(Error::Shape(format!(
            "attention feature widths differ: query {qs:?} vs value {vs:?}"
        )));
    }
    let mut tape = Tape::new();
    let q = tape.leaf(query.clone());
    let v = tape.leaf(value.clone());
    let (vars, _) = AttentionVars::record(&mut tape, params);
    let (context, weights) = attention_on_tape(&mut tape, q, v, &vars)?;
    Ok((tape.value(context).clone(), tape.value(weights).clone()))
}
