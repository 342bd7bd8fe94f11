//! Layer/model abstraction, architecture builders, and classifier training.

pub mod attention;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::seeds;
use crate::tensor::tape::{Tape, Var};
use crate::tensor::{adam_step, Activation, AdamHyper, AdamState, LossKind, Tensor};

pub use attention::{attention, AttentionMode, AttentionParams};

use attention::{attention_on_tape, AttentionVars};

/// One row of a model architecture. Serializable and stable across
/// checkpoint round-trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "layer", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Per-sample input shape (batch axis elided), e.g. `[78, 1]`.
    Input { shape: Vec<usize> },
    Conv1d {
        filters: usize,
        kernel: usize,
        stride: usize,
        activation: Option<Activation>,
    },
    GlobalAvgPool,
    Reshape { shape: Vec<usize> },
    Attention { mode: AttentionMode },
    Dense {
        units: usize,
        activation: Option<Activation>,
    },
    Dropout { rate: f64 },
    Activation { kind: Activation },
}

/// Parameters of one layer, in a fixed named order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub named: Vec<(String, Tensor)>,
}

impl LayerParams {
    fn empty() -> Self {
        LayerParams { named: Vec::new() }
    }

    fn count(&self) -> usize {
        self.named.iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Ordered layer stack with parameter tensors keyed by (layer index, name).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    specs: Vec<LayerSpec>,
    params: Vec<LayerParams>,
    class_count: usize,
}

fn layer_output_shape(spec: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    match spec {
        LayerSpec::Input { shape } => Ok(shape.clone()),
        LayerSpec::Conv1d { filters, stride, .. } => {
            if input.len() < 2 {
                return Err(Error::Shape(format!(
                    "conv1d layer needs [L, C] input, got {input:?}"
                )));
            }
            let mut out = input.to_vec();
            let r = out.len();
            out[r - 2] = input[r - 2].div_ceil(*stride);
            out[r - 1] = *filters;
            Ok(out)
        }
        LayerSpec::GlobalAvgPool => {
            if input.len() < 2 {
                return Err(Error::Shape(format!(
                    "global_avg_pool needs [L, C] input, got {input:?}"
                )));
            }
            let mut out = input.to_vec();
            out.remove(out.len() - 2);
            Ok(out)
        }
        LayerSpec::Reshape { shape } => {
            let have: usize = input.iter().product();
            let want: usize = shape.iter().product();
            if have != want {
                return Err(Error::Shape(format!(
                    "reshape {input:?} -> {shape:?} changes element count"
                )));
            }
            Ok(shape.clone())
        }
        LayerSpec::Attention { .. } => {
            if input.len() < 2 {
                return Err(Error::Shape(format!(
                    "attention needs [T, d] input, got {input:?}"
                )));
            }
            Ok(input.to_vec())
        }
        LayerSpec::Dense { units, .. } => {
            if input.is_empty() {
                return Err(Error::Shape("dense needs at least one input axis".into()));
            }
            let mut out = input.to_vec();
            *out.last_mut().unwrap() = *units;
            Ok(out)
        }
        LayerSpec::Dropout { .. } | LayerSpec::Activation { .. } => Ok(input.to_vec()),
    }
}

fn init_layer_params(
    spec: &LayerSpec,
    input: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<LayerParams> {
    Ok(match spec {
        LayerSpec::Conv1d { filters, kernel, .. } => {
            let c_in = input[input.len() - 1];
            let fan_in = c_in * kernel;
            let fan_out = filters * kernel;
            LayerParams {
                named: vec![
                    (
                        "kernels".into(),
                        Tensor::glorot_uniform(vec![*filters, c_in, *kernel], fan_in, fan_out, rng),
                    ),
                    ("bias".into(), Tensor::zeros(vec![*filters])),
                ],
            }
        }
        LayerSpec::Dense { units, .. } => {
            let d_in = input[input.len() - 1];
            LayerParams {
                named: vec![
                    (
                        "weight".into(),
                        Tensor::glorot_uniform(vec![d_in, *units], d_in, *units, rng),
                    ),
                    ("bias".into(), Tensor::zeros(vec![*units])),
                ],
            }
        }
        LayerSpec::Attention { mode } => {
            let d = input[input.len() - 1];
            LayerParams {
                named: AttentionParams::init(*mode, d, rng)
                    .named()
                    .into_iter()
                    .map(|(n, t)| (n.to_string(), t.clone()))
                    .collect(),
            }
        }
        _ => LayerParams::empty(),
    })
}

impl Model {
    /// Build a model from layer specs, initializing parameters from `seed`.
    /// The first layer must be `Input`.
    pub fn build(specs: Vec<LayerSpec>, class_count: usize, seed: u64) -> Result<Model> {
        match specs.first() {
            Some(LayerSpec::Input { .. }) => {}
            _ => return Err(Error::Usage("first layer must be Input".into())),
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut shape: Vec<usize> = Vec::new();
        let mut params = Vec::with_capacity(specs.len());
        for spec in &specs {
            let out = layer_output_shape(spec, &shape)?;
            params.push(init_layer_params(spec, &shape, &mut rng)?);
            shape = out;
        }
        Ok(Model {
            specs,
            params,
            class_count,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    /// Per-sample input shape (batch axis elided).
    pub fn input_shape(&self) -> &[usize] {
        match &self.specs[0] {
            LayerSpec::Input { shape } => shape,
            _ => unreachable!("validated at build time"),
        }
    }

    /// The sequence length the model ingests.
    pub fn input_len(&self) -> usize {
        self.input_shape()[0]
    }

    /// Per-sample output shape of every layer, in order (batch axis elided).
    pub fn per_layer_output_shapes(&self) -> Vec<Vec<usize>> {
        let mut shape: Vec<usize> = Vec::new();
        self.specs
            .iter()
            .map(|s| {
                shape = layer_output_shape(s, &shape).expect("validated at build time");
                shape.clone()
            })
            .collect()
    }

    /// Per-sample output shape of the final layer.
    pub fn output_shape(&self) -> Vec<usize> {
        self.per_layer_output_shapes()
            .pop()
            .expect("models have at least an input layer")
    }

    /// Parameter tensor for (layer index, name).
    pub fn param(&self, layer: usize, name: &str) -> Option<&Tensor> {
        self.params[layer]
            .named
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, layer: usize, name: &str) -> Option<&mut Tensor> {
        self.params[layer]
            .named
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// All parameters in (layer, declaration) order.
    pub fn params_flat(&self) -> Vec<&Tensor> {
        self.params
            .iter()
            .flat_map(|l| l.named.iter().map(|(_, t)| t))
            .collect()
    }

    pub fn params_flat_mut(&mut self) -> Vec<&mut Tensor> {
        self.params
            .iter_mut()
            .flat_map(|l| l.named.iter_mut().map(|(_, t)| t))
            .collect()
    }

    /// Head activation: the last activation reached on the output path.
    pub fn head_activation(&self) -> Option<Activation> {
        for spec in self.specs.iter().rev() {
            match spec {
                LayerSpec::Dense {
                    activation: Some(a),
                    ..
                } => return Some(*a),
                LayerSpec::Conv1d {
                    activation: Some(a),
                    ..
                } => return Some(*a),
                LayerSpec::Activation { kind } => return Some(*kind),
                LayerSpec::Dropout { .. } => continue,
                _ => continue,
            }
        }
        None
    }

    /// Run the layer stack on a taped batch. Pushes parameter leaves in
    /// `params_flat` order and returns their vars plus the raw output var.
    pub(crate) fn forward_on_tape(
        &self,
        tape: &mut Tape,
        input: Var,
        training: bool,
        seed: u64,
    ) -> Result<(Vec<Var>, Var)> {
        let batch_rank = tape.value(input).shape().len() - self.input_shape().len();
        let mut param_vars = Vec::new();
        let mut x = input;
        for (li, spec) in self.specs.iter().enumerate() {
            match spec {
                LayerSpec::Input { shape } => {
                    let got = tape.value(x).shape();
                    if &got[batch_rank..] != shape.as_slice() {
                        return Err(Error::Shape(format!(
                            "input batch {got:?} does not end with model input shape {shape:?}"
                        )));
                    }
                }
                LayerSpec::Conv1d {
                    stride, activation, ..
                } => {
                    let k = tape.leaf(self.params[li].named[0].1.clone());
                    let b = tape.leaf(self.params[li].named[1].1.clone());
                    param_vars.extend([k, b]);
                    x = tape.conv1d(x, k, b, *stride)?;
                    if let Some(a) = activation {
                        x = tape.unary(*a, x)?;
                    }
                }
                LayerSpec::GlobalAvgPool => {
                    x = tape.global_avg_pool1d(x)?;
                }
                LayerSpec::Reshape { shape } => {
                    let batch: Vec<usize> = tape.value(x).shape()[..batch_rank].to_vec();
                    let mut target = batch;
                    target.extend_from_slice(shape);
                    x = tape.reshape(x, target)?;
                }
                LayerSpec::Attention { mode } => {
                    let params = self.attention_params(li, *mode)?;
                    let (vars, leaves) = AttentionVars::record(tape, &params);
                    param_vars.extend(leaves);
                    let (context, _weights) = attention_on_tape(tape, x, x, &vars)?;
                    x = context;
                }
                LayerSpec::Dense { activation, .. } => {
                    let w = tape.leaf(self.params[li].named[0].1.clone());
                    let b = tape.leaf(self.params[li].named[1].1.clone());
                    param_vars.extend([w, b]);
                    x = tape.dense(x, w, Some(b))?;
                    if let Some(a) = activation {
                        x = tape.unary(*a, x)?;
                    }
                }
                LayerSpec::Dropout { rate } => {
                    x = tape.dropout(x, *rate, training, seeds::derive3(seed, li as u64, 0x0d0))?;
                }
                LayerSpec::Activation { kind } => {
                    x = tape.unary(*kind, x)?;
                }
            }
        }
        Ok((param_vars, x))
    }

    fn attention_params(&self, layer: usize, mode: AttentionMode) -> Result<AttentionParams> {
        let named = &self.params[layer].named;
        match mode {
            AttentionMode::ScaledDot => Ok(AttentionParams::ScaledDot {
                scale: named[0].1.clone(),
            }),
            AttentionMode::Additive => Ok(AttentionParams::Additive {
                w_query: named[0].1.clone(),
                w_value: named[1].1.clone(),
                v_align: named[2].1.clone(),
            }),
        }
    }

    /// Forward a `[B, ...input_shape]` batch, returning the raw output
    /// (`[B, ...output_shape]`). Inference is deterministic; training mode
    /// derives dropout masks from `seed`.
    pub fn forward_raw(&self, batch: &Tensor, training: bool, seed: u64) -> Result<Tensor> {
        let shape = batch.shape();
        let want = self.input_shape();
        if shape.len() != want.len() + 1 || &shape[1..] != want {
            return Err(Error::Shape(format!(
                "batch shape {shape:?} does not match [B]+{want:?}"
            )));
        }
        let mut tape = Tape::new();
        let input = tape.leaf(batch.clone());
        let (_, out) = self.forward_on_tape(&mut tape, input, training, seed)?;
        Ok(tape.value(out).clone())
    }

    /// Forward a classifier batch to per-sample probabilities
    /// `[B, class_count]` (the tables' trailing `(1, C)` axis squeezed).
    pub fn forward(&self, batch: &Tensor, training: bool, seed: u64) -> Result<Tensor> {
        let out = self.forward_raw(batch, training, seed)?;
        let b = batch.shape()[0];
        let per_sample: usize = out.shape()[1..].iter().product();
        if per_sample != self.class_count {
            return Err(Error::Shape(format!(
                "output shape {:?} is not a [{}-class] head",
                out.shape(),
                self.class_count
            )));
        }
        out.reshape(vec![b, self.class_count])
    }
}

/// Total and per-layer parameter counts.
pub fn count_params(model: &Model) -> (usize, Vec<usize>) {
    let per_layer: Vec<usize> = model.params.iter().map(|l| l.count()).collect();
    (per_layer.iter().sum(), per_layer)
}

/// Where the attention layer sits relative to the pooling stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AttentionPosition {
    /// Attend over the single pooled feature row (the reference layout).
    #[default]
    PostPool,
    /// Attend over the full sequence before pooling.
    PrePool,
}

/// Head/loss pairing for multiclass models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MulticlassHead {
    /// Softmax head with categorical cross-entropy.
    #[default]
    Softmax,
    /// Independent per-class sigmoids with binary cross-entropy.
    Sigmoid,
}

/// Knobs for [`build_cnn_attention_with`]; defaults give the reference model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnAttentionOptions {
    pub attention_mode: AttentionMode,
    pub attention_position: AttentionPosition,
    pub multiclass_head: MulticlassHead,
    pub dropout_rate: f64,
}

impl Default for CnnAttentionOptions {
    fn default() -> Self {
        CnnAttentionOptions {
            attention_mode: AttentionMode::ScaledDot,
            attention_position: AttentionPosition::PostPool,
            multiclass_head: MulticlassHead::Softmax,
            dropout_rate: 0.5,
        }
    }
}

/// The reference classifier: two Conv1D blocks (32 then 64 filters, kernel 3,
/// 'same', ReLU), global average pooling, a reshape to one attended row, a
/// single-parameter attention layer, Dense(128, ReLU), Dropout(0.5), and a
/// class head (sigmoid when `class_count == 1`, softmax otherwise).
pub fn build_cnn_attention(input_len: usize, class_count: usize, seed: u64) -> Result<Model> {
    build_cnn_attention_with(input_len, class_count, CnnAttentionOptions::default(), seed)
}

pub fn build_cnn_attention_with(
    input_len: usize,
    class_count: usize,
    opts: CnnAttentionOptions,
    seed: u64,
) -> Result<Model> {
    if input_len < 3 {
        return Err(Error::Usage(format!("input_len {input_len} below minimum 3")));
    }
    if class_count < 1 {
        return Err(Error::Usage("class_count must be >= 1".into()));
    }
    let head = if class_count == 1 {
        Activation::Sigmoid
    } else {
        match opts.multiclass_head {
            MulticlassHead::Softmax => Activation::Softmax,
            MulticlassHead::Sigmoid => Activation::Sigmoid,
        }
    };
    let conv = |filters: usize| LayerSpec::Conv1d {
        filters,
        kernel: 3,
        stride: 1,
        activation: Some(Activation::Relu),
    };
    let mut specs = vec![
        LayerSpec::Input {
            shape: vec![input_len, 1],
        },
        conv(32),
        conv(64),
    ];
    match opts.attention_position {
        AttentionPosition::PostPool => {
            specs.push(LayerSpec::GlobalAvgPool);
            specs.push(LayerSpec::Reshape { shape: vec![1, 64] });
            specs.push(LayerSpec::Attention {
                mode: opts.attention_mode,
            });
        }
        AttentionPosition::PrePool => {
            specs.push(LayerSpec::Attention {
                mode: opts.attention_mode,
            });
            specs.push(LayerSpec::GlobalAvgPool);
            specs.push(LayerSpec::Reshape { shape: vec![1, 64] });
        }
    }
    specs.push(LayerSpec::Dense {
        units: 128,
        activation: Some(Activation::Relu),
    });
    specs.push(LayerSpec::Dropout {
        rate: opts.dropout_rate,
    });
    specs.push(LayerSpec::Dense {
        units: class_count,
        activation: Some(head),
    });
    Model::build(specs, class_count, seed)
}

/// Classifier training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub seed: u64,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 128,
            adam: AdamHyper::default(),
            seed: 0,
            loss: LossKind::BinaryCe,
        }
    }
}

/// Per-epoch training/validation quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Epoch-by-epoch record of one training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    fn push_checked(&mut self, rec: EpochRecord) -> Result<()> {
        let vals = [rec.train_loss, rec.train_accuracy, rec.val_loss, rec.val_accuracy];
        if !vals.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite training metrics at epoch {}: {rec:?}",
                self.epochs.len()
            )));
        }
        if !(0.0..=1.0).contains(&rec.train_accuracy) || !(0.0..=1.0).contains(&rec.val_accuracy) {
            return Err(Error::Domain(format!("accuracy outside [0,1]: {rec:?}")));
        }
        self.epochs.push(rec);
        Ok(())
    }
}

fn loss_targets(loss: LossKind, labels: &[usize], class_count: usize) -> LossTargets {
    match loss {
        LossKind::BinaryCe if class_count == 1 => {
            LossTargets::Binary(labels.iter().map(|&y| y as f64).collect())
        }
        LossKind::BinaryCe => {
            // per-class sigmoid head: one-hot rows, flattened
            let mut t = vec![0.0; labels.len() * class_count];
            for (r, &y) in labels.iter().enumerate() {
                t[r * class_count + y] = 1.0;
            }
            LossTargets::Binary(t)
        }
        LossKind::CategoricalCe => LossTargets::Categorical(labels.to_vec()),
    }
}

enum LossTargets {
    Binary(Vec<f64>),
    Categorical(Vec<usize>),
}

fn batch_loss(tape: &mut Tape, probs: Var, targets: &LossTargets) -> Result<Var> {
    match targets {
        LossTargets::Binary(t) => tape.binary_ce(probs, t),
        LossTargets::Categorical(t) => tape.categorical_ce(probs, t),
    }
}

/// Mean loss of a classifier on a labeled `[B, L, 1]` batch (inference mode).
pub fn batch_loss_value(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    loss: LossKind,
) -> Result<f64> {
    let mut tape = Tape::new();
    let input = tape.leaf(batch.clone());
    let (_, raw) = model.forward_on_tape(&mut tape, input, false, 0)?;
    let probs = tape.reshape(raw, vec![labels.len(), model.class_count()])?;
    let targets = loss_targets(loss, labels, model.class_count());
    let l = batch_loss(&mut tape, probs, &targets)?;
    tape.scalar_value(l)
}

/// Loss plus the gradient of every parameter (in `params_flat` order) for a
/// labeled batch, via one reverse pass. Inference mode (no dropout).
pub fn loss_and_gradients(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    loss: LossKind,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let input = tape.leaf(batch.clone());
    let (param_vars, raw) = model.forward_on_tape(&mut tape, input, false, 0)?;
    let probs = tape.reshape(raw, vec![labels.len(), model.class_count()])?;
    let targets = loss_targets(loss, labels, model.class_count());
    let l = batch_loss(&mut tape, probs, &targets)?;
    let value = tape.scalar_value(l)?;
    tape.backward(l)?;
    let grads = param_vars.iter().map(|&v| tape.grad(v).to_vec()).collect();
    Ok((value, grads))
}

/// Class decisions from a probability matrix: threshold 0.5 (boundary -> 1)
/// for single-probability heads, lowest-index argmax otherwise.
pub fn classes_from_probs(probs: &Tensor, class_count: usize) -> Vec<usize> {
    let b = probs.shape()[0];
    let width = probs.numel() / b.max(1);
    (0..b)
        .map(|r| {
            let row = probs.row(r, width);
            if class_count == 1 {
                usize::from(row[0] >= 0.5)
            } else {
                let mut best = 0;
                for (c, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            }
        })
        .collect()
}

/// Predicted class labels for a `[B, L, 1]` batch.
pub fn predict_classes(model: &Model, batch: &Tensor) -> Result<Vec<usize>> {
    let probs = model.forward(batch, false, 0)?;
    Ok(classes_from_probs(&probs, model.class_count()))
}

/// Predicted class labels over a whole dataset, evaluated in bounded batches.
pub fn predict_dataset(model: &Model, ds: &Dataset, batch_size: usize) -> Result<Vec<usize>> {
    let idxs: Vec<usize> = (0..ds.len()).collect();
    let mut out = Vec::with_capacity(ds.len());
    for chunk in idxs.chunks(batch_size.max(1)) {
        let batch = ds.batch_features(chunk);
        out.extend(predict_classes(model, &batch)?);
    }
    Ok(out)
}

/// Mean loss and accuracy of a model over a dataset (inference mode).
pub fn evaluate_loss_accuracy(
    model: &Model,
    ds: &Dataset,
    loss: LossKind,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::Usage("cannot evaluate on an empty dataset".into()));
    }
    let idxs: Vec<usize> = (0..ds.len()).collect();
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for chunk in idxs.chunks(batch_size.max(1)) {
        let batch = ds.batch_features(chunk);
        let labels = ds.batch_labels(chunk);
        let mut tape = Tape::new();
        let input = tape.leaf(batch);
        let (_, raw) = model.forward_on_tape(&mut tape, input, false, 0)?;
        let probs = tape.reshape(raw, vec![chunk.len(), model.class_count()])?;
        let targets = loss_targets(loss, &labels, model.class_count());
        let l = batch_loss(&mut tape, probs, &targets)?;
        loss_sum += tape.scalar_value(l)? * chunk.len() as f64;
        let decided = classes_from_probs(tape.value(probs), model.class_count());
        correct += decided
            .iter()
            .zip(&labels)
            .filter(|(a, b)| a == b)
            .count();
    }
    let n = ds.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

/// Mini-batch training loop: seeded shuffles, Adam updates, per-epoch
/// train/validation metrics. Parameters update in place; the final
/// incomplete batch is included.
pub fn train_classifier(
    model: &mut Model,
    train: &Dataset,
    val: &Dataset,
    config: &TrainConfig,
) -> Result<TrainHistory> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Usage("training and validation sets must be nonempty".into()));
    }
    if train.width() != model.input_len() {
        return Err(Error::Shape(format!(
            "dataset width {} != model input length {}",
            train.width(),
            model.input_len()
        )));
    }
    if config.batch_size == 0 {
        return Err(Error::Usage("batch_size must be >= 1".into()));
    }
    let mut history = TrainHistory::default();
    if config.epochs == 0 {
        return Ok(history);
    }

    let mut state = {
        let params = model.params_flat();
        AdamState::new(&params)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = train.batch_features(chunk);
            let labels = train.batch_labels(chunk);
            let dropout_seed = seeds::derive3(config.seed, epoch as u64, bi as u64);

            let mut tape = Tape::new();
            let input = tape.leaf(batch);
            let (param_vars, raw) = model.forward_on_tape(&mut tape, input, true, dropout_seed)?;
            let probs = tape.reshape(raw, vec![chunk.len(), model.class_count()])?;
            let targets = loss_targets(config.loss, &labels, model.class_count());
            let loss_var = batch_loss(&mut tape, probs, &targets)?;
            let loss_val = tape.scalar_value(loss_var)?;
            if !loss_val.is_finite() {
                return Err(Error::Domain(format!(
                    "non-finite loss at epoch {epoch}, batch {bi}"
                )));
            }
            tape.backward(loss_var)?;

            let decided = classes_from_probs(tape.value(probs), model.class_count());
            correct += decided.iter().zip(&labels).filter(|(a, b)| a == b).count();
            loss_sum += loss_val * chunk.len() as f64;

            let grads: Vec<Vec<f64>> =
                param_vars.iter().map(|&v| tape.grad(v).to_vec()).collect();
            let mut params = model.params_flat_mut();
            for (p, g) in params.iter_mut().zip(grads) {
                p.set_grad(g)?;
            }
            adam_step(&mut params, &mut state, &config.adam)?;
        }

        let (val_loss, val_accuracy) =
            evaluate_loss_accuracy(model, val, config.loss, config.batch_size.max(256))?;
        history.push_checked(EpochRecord {
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_loss,
            val_accuracy,
        })?;
    }
    Ok(history)
}
