//! Wengert-list reverse-mode differentiation.
//!
//! Operations append nodes in execution order; [`Tape::backward`] replays the
//! list once in reverse, accumulating vector-Jacobian products into per-node
//! gradient buffers. Gradient buffers live beside (not inside) the nodes so
//! the backward pass can read values while writing gradients.

use crate::error::{Error, Result};
use crate::tensor::kernels::{self, Conv1dDims};
use crate::tensor::{dropout_mask, Activation, Tensor};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add { lhs: Var, rhs: Var },
    Mul { lhs: Var, rhs: Var },
    SumAll { input: Var },
    ScaleByScalar { input: Var, scale: Var },
    Conv1d { input: Var, kernels: Var, bias: Var, dims: Conv1dDims },
    Dense { input: Var, weight: Var, bias: Option<Var>, rows: usize, d_in: usize, d_out: usize },
    Unary { kind: Activation, input: Var },
    Softmax { input: Var, axis: usize },
    GlobalAvgPool1d { input: Var, batch: usize, len: usize, c: usize },
    Reshape { input: Var },
    Dropout { input: Var, mask: Vec<f64> },
    Matmul { lhs: Var, rhs: Var, trans_b: bool, rhs_batched: bool, batch: usize, m: usize, k: usize, n: usize },
    PairwiseSum { lhs: Var, rhs: Var, batch: usize, p: usize, q: usize, d: usize },
    BinaryCe { probs: Var, targets: Vec<f64> },
    CategoricalCe { probs: Var, targets: Vec<usize>, classes: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of executed operations plus per-node gradient buffers.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record an input tensor (parameter or data) as a leaf.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient buffer of a node; zeros until `backward` has run.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.grads[v.0]
    }

    /// The single value of a scalar node.
    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let t = self.value(v);
        if t.numel() != 1 {
            return Err(Error::Usage(format!(
                "expected scalar node, got shape {:?}",
                t.shape()
            )));
        }
        Ok(t.data()[0])
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.grads.push(vec![0.0; value.numel()]);
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.check_same_shape("add", lhs, rhs)?;
        let data = self
            .value(lhs)
            .data()
            .iter()
            .zip(self.value(rhs).data())
            .map(|(a, b)| a + b)
            .collect();
        let t = Tensor::new(self.shape(lhs).to_vec(), data)?;
        Ok(self.push(t, Op::Add { lhs, rhs }))
    }

    pub fn mul(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        self.check_same_shape("mul", lhs, rhs)?;
        let data = self
            .value(lhs)
            .data()
            .iter()
            .zip(self.value(rhs).data())
            .map(|(a, b)| a * b)
            .collect();
        let t = Tensor::new(self.shape(lhs).to_vec(), data)?;
        Ok(self.push(t, Op::Mul { lhs, rhs }))
    }

    pub fn sum_all(&mut self, input: Var) -> Var {
        let s: f64 = self.value(input).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll { input })
    }

    /// Multiply every element by a learned scalar (shape `[1]`) parameter.
    pub fn scale_by(&mut self, input: Var, scale: Var) -> Result<Var> {
        if self.value(scale).numel() != 1 {
            return Err(Error::Shape(format!(
                "scale parameter must be a scalar, got {:?}",
                self.shape(scale)
            )));
        }
        let s = self.value(scale).data()[0];
        let data = self.value(input).data().iter().map(|v| v * s).collect();
        let t = Tensor::new(self.shape(input).to_vec(), data)?;
        Ok(self.push(t, Op::ScaleByScalar { input, scale }))
    }

    pub fn conv1d(&mut self, input: Var, kernels: Var, bias: Var, stride: usize) -> Result<Var> {
        if input.0 == kernels.0 || input.0 == bias.0 || kernels.0 == bias.0 {
            return Err(Error::Usage("conv1d operands must be distinct nodes".into()));
        }
        let ishape = self.shape(input).to_vec();
        if ishape.len() < 2 {
            return Err(Error::Shape(format!(
                "conv1d input must be [..., L, C_in], got {ishape:?}"
            )));
        }
        let c_in = ishape[ishape.len() - 1];
        let len = ishape[ishape.len() - 2];
        let batch: usize = ishape[..ishape.len() - 2].iter().product();
        let dims = Conv1dDims::new(
            batch,
            len,
            c_in,
            &self.nodes[kernels.0].value,
            &self.nodes[bias.0].value,
            stride,
        )?;
        let mut out_shape = ishape.clone();
        let r = out_shape.len();
        out_shape[r - 2] = dims.out_len;
        out_shape[r - 1] = dims.c_out;
        let mut out = vec![0.0; batch * dims.out_len * dims.c_out];
        kernels::conv1d_forward(
            self.value(input).data(),
            self.value(kernels).data(),
            self.value(bias).data(),
            &dims,
            &mut out,
        );
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(t, Op::Conv1d { input, kernels, bias, dims }))
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        if input.0 == weight.0 || bias.is_some_and(|b| b.0 == input.0 || b.0 == weight.0) {
            return Err(Error::Usage("dense operands must be distinct nodes".into()));
        }
        let (rows, d_in, d_out) = kernels::dense_dims(
            self.shape(input),
            self.shape(weight),
            bias.map(|b| self.shape(b)),
        )?;
        let mut out_shape = self.shape(input).to_vec();
        *out_shape.last_mut().unwrap() = d_out;
        let mut out = vec![0.0; rows * d_out];
        kernels::dense_forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            rows,
            d_in,
            d_out,
            &mut out,
        );
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(t, Op::Dense { input, weight, bias, rows, d_in, d_out }))
    }

    pub fn unary(&mut self, kind: Activation, input: Var) -> Result<Var> {
        if let Activation::Softmax = kind {
            let axis = self.shape(input).len().saturating_sub(1);
            return self.softmax(input, axis);
        }
        let data = self
            .value(input)
            .data()
            .iter()
            .map(|&v| kernels::apply_unary(kind, v))
            .collect();
        let t = Tensor::new(self.shape(input).to_vec(), data)?;
        Ok(self.push(t, Op::Unary { kind, input }))
    }

    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if axis >= shape.len() {
            return Err(Error::Shape(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let mut out = vec![0.0; self.value(input).numel()];
        kernels::softmax_axis(self.value(input).data(), &shape, axis, &mut out);
        let t = Tensor::new(shape, out)?;
        Ok(self.push(t, Op::Softmax { input, axis }))
    }

    pub fn global_avg_pool1d(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() < 2 {
            return Err(Error::Shape(format!(
                "global_avg_pool1d input must be [..., L, C], got {shape:?}"
            )));
        }
        let c = shape[shape.len() - 1];
        let len = shape[shape.len() - 2];
        if len == 0 {
            return Err(Error::Usage("global_avg_pool1d over zero-length input".into()));
        }
        let batch: usize = shape[..shape.len() - 2].iter().product();
        let mut out = vec![0.0; batch * c];
        kernels::global_avg_pool_forward(self.value(input).data(), batch, len, c, &mut out);
        let mut out_shape = shape.clone();
        out_shape.remove(out_shape.len() - 2);
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(t, Op::GlobalAvgPool1d { input, batch, len, c }))
    }

    pub fn reshape(&mut self, input: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(input).reshape(shape)?;
        Ok(self.push(t, Op::Reshape { input }))
    }

    /// Inverted dropout. Inference (or rate 0) records nothing and returns
    /// the input node untouched.
    pub fn dropout(&mut self, input: Var, rate: f64, training: bool, seed: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Usage(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(input);
        }
        let mask = dropout_mask(self.value(input).numel(), rate, seed);
        let data = self
            .value(input)
            .data()
            .iter()
            .zip(&mask)
            .map(|(v, m)| v * m)
            .collect();
        let t = Tensor::new(self.shape(input).to_vec(), data)?;
        Ok(self.push(t, Op::Dropout { input, mask }))
    }

    /// Batched matrix product `lhs @ rhs` (or `lhs @ rhs^T`). `rhs` is either
    /// shared (rank 2) or carries the same leading batch axes as `lhs`.
    pub fn matmul(&mut self, lhs: Var, rhs: Var, trans_b: bool) -> Result<Var> {
        let ls = self.shape(lhs).to_vec();
        let rs = self.shape(rhs).to_vec();
        if ls.len() < 2 || rs.len() < 2 {
            return Err(Error::Shape(format!(
                "matmul needs rank >= 2 operands, got {ls:?} and {rs:?}"
            )));
        }
        let m = ls[ls.len() - 2];
        let k = ls[ls.len() - 1];
        let batch: usize = ls[..ls.len() - 2].iter().product();
        let rhs_batched = rs.len() > 2;
        if rhs_batched && rs[..rs.len() - 2] != ls[..ls.len() - 2] {
            return Err(Error::Shape(format!(
                "matmul batch axes differ: {ls:?} vs {rs:?}"
            )));
        }
        let (rk, n) = if trans_b {
            (rs[rs.len() - 1], rs[rs.len() - 2])
        } else {
            (rs[rs.len() - 2], rs[rs.len() - 1])
        };
        if rk != k {
            return Err(Error::Shape(format!(
                "matmul inner dimensions differ: {ls:?} vs {rs:?} (trans_b={trans_b})"
            )));
        }
        let mut out_shape = ls[..ls.len() - 2].to_vec();
        out_shape.push(m);
        out_shape.push(n);
        let mut out = vec![0.0; batch * m * n];
        kernels::matmul(
            self.value(lhs).data(),
            self.value(rhs).data(),
            batch,
            m,
            k,
            n,
            rhs_batched,
            trans_b,
            &mut out,
        );
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(t, Op::Matmul { lhs, rhs, trans_b, rhs_batched, batch, m, k, n }))
    }

    /// `out[.., i, j, :] = lhs[.., i, :] + rhs[.., j, :]` — the pairwise sums
    /// used by the additive alignment network.
    pub fn pairwise_sum(&mut self, lhs: Var, rhs: Var) -> Result<Var> {
        let ls = self.shape(lhs).to_vec();
        let rs = self.shape(rhs).to_vec();
        if ls.len() < 2 || rs.len() < 2 || ls[..ls.len() - 2] != rs[..rs.len() - 2] {
            return Err(Error::Shape(format!(
                "pairwise_sum needs matching leading axes, got {ls:?} and {rs:?}"
            )));
        }
        let d = ls[ls.len() - 1];
        if rs[rs.len() - 1] != d {
            return Err(Error::Shape(format!(
                "pairwise_sum trailing extents differ: {ls:?} vs {rs:?}"
            )));
        }
        let p = ls[ls.len() - 2];
        let q = rs[rs.len() - 2];
        let batch: usize = ls[..ls.len() - 2].iter().product();
        let a = self.value(lhs).data();
        let b = self.value(rhs).data();
        let mut out = vec![0.0; batch * p * q * d];
        for bt in 0..batch {
            for i in 0..p {
                let ar = &a[(bt * p + i) * d..(bt * p + i + 1) * d];
                for j in 0..q {
                    let br = &b[(bt * q + j) * d..(bt * q + j + 1) * d];
                    let or = &mut out[((bt * p + i) * q + j) * d..((bt * p + i) * q + j + 1) * d];
                    for c in 0..d {
                        or[c] = ar[c] + br[c];
                    }
                }
            }
        }
        let mut out_shape = ls[..ls.len() - 2].to_vec();
        out_shape.extend([p, q, d]);
        let t = Tensor::new(out_shape, out)?;
        Ok(self.push(t, Op::PairwiseSum { lhs, rhs, batch, p, q, d }))
    }

    /// Mean binary cross-entropy of probabilities against 0/1 targets.
    pub fn binary_ce(&mut self, probs: Var, targets: &[f64]) -> Result<Var> {
        if self.value(probs).numel() != targets.len() {
            return Err(Error::Shape(format!(
                "binary_ce: {} probabilities vs {} targets",
                self.value(probs).numel(),
                targets.len()
            )));
        }
        let l = kernels::binary_ce_forward(self.value(probs).data(), targets);
        Ok(self.push(
            Tensor::scalar(l),
            Op::BinaryCe { probs, targets: targets.to_vec() },
        ))
    }

    /// Mean categorical cross-entropy of `[rows, classes]` probabilities
    /// against class indices.
    pub fn categorical_ce(&mut self, probs: Var, targets: &[usize]) -> Result<Var> {
        let shape = self.shape(probs).to_vec();
        let classes = *shape.last().ok_or_else(|| {
            Error::Shape("categorical_ce: probs must have a class axis".into())
        })?;
        let rows = self.value(probs).numel() / classes.max(1);
        if rows != targets.len() {
            return Err(Error::Shape(format!(
                "categorical_ce: {rows} probability rows vs {} targets",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= classes) {
            return Err(Error::Domain(format!(
                "class index {bad} out of range for {classes} classes"
            )));
        }
        let l = kernels::categorical_ce_forward(self.value(probs).data(), targets, classes);
        Ok(self.push(
            Tensor::scalar(l),
            Op::CategoricalCe { probs, targets: targets.to_vec(), classes },
        ))
    }

    /// Replay the tape in reverse, filling every node's gradient buffer with
    /// the exact reverse-mode derivative of the scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for g in &mut self.grads {
            g.fill(0.0);
        }
        self.grads[loss.0][0] = 1.0;
        for i in (0..self.nodes.len()).rev() {
            let gout = std::mem::take(&mut self.grads[i]);
            propagate(&self.nodes, &mut self.grads, i, &gout);
            self.grads[i] = gout;
        }
        Ok(())
    }

    fn check_same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{op}: operand shapes differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }
}

fn axpy(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn propagate(nodes: &[Node], grads: &mut [Vec<f64>], i: usize, gout: &[f64]) {
    match &nodes[i].op {
        Op::Leaf => {}
        Op::Add { lhs, rhs } => {
            axpy(&mut grads[lhs.0], gout);
            axpy(&mut grads[rhs.0], gout);
        }
        Op::Mul { lhs, rhs } => {
            // Sequential accumulation keeps lhs == rhs (x*x) correct.
            let rv = nodes[rhs.0].value.data();
            for (g, (go, r)) in grads[lhs.0].iter_mut().zip(gout.iter().zip(rv)) {
                *g += go * r;
            }
            let lv = nodes[lhs.0].value.data();
            for (g, (go, l)) in grads[rhs.0].iter_mut().zip(gout.iter().zip(lv)) {
                *g += go * l;
            }
        }
        Op::SumAll { input } => {
            let g = gout[0];
            for d in grads[input.0].iter_mut() {
                *d += g;
            }
        }
        Op::ScaleByScalar { input, scale } => {
            let s = nodes[scale.0].value.data()[0];
            let x = nodes[input.0].value.data();
            let mut ds = 0.0;
            for (xv, go) in x.iter().zip(gout) {
                ds += xv * go;
            }
            for (g, go) in grads[input.0].iter_mut().zip(gout) {
                *g += s * go;
            }
            grads[scale.0][0] += ds;
        }
        Op::Conv1d { input, kernels: ker, bias, dims } => {
            let mut dx = std::mem::take(&mut grads[input.0]);
            let mut dk = std::mem::take(&mut grads[ker.0]);
            let mut db = std::mem::take(&mut grads[bias.0]);
            kernels::conv1d_backward(
                nodes[input.0].value.data(),
                nodes[ker.0].value.data(),
                gout,
                dims,
                &mut dx,
                &mut dk,
                &mut db,
            );
            grads[input.0] = dx;
            grads[ker.0] = dk;
            grads[bias.0] = db;
        }
        Op::Dense { input, weight, bias, rows, d_in, d_out } => {
            let mut dx = std::mem::take(&mut grads[input.0]);
            let mut dw = std::mem::take(&mut grads[weight.0]);
            let mut db = bias.map(|b| std::mem::take(&mut grads[b.0]));
            kernels::dense_backward(
                nodes[input.0].value.data(),
                nodes[weight.0].value.data(),
                gout,
                *rows,
                *d_in,
                *d_out,
                &mut dx,
                &mut dw,
                db.as_deref_mut(),
            );
            grads[input.0] = dx;
            grads[weight.0] = dw;
            if let (Some(b), Some(dbv)) = (bias, db) {
                grads[b.0] = dbv;
            }
        }
        Op::Unary { kind, input } => {
            let x = nodes[input.0].value.data();
            let y = nodes[i].value.data();
            for (j, g) in grads[input.0].iter_mut().enumerate() {
                *g += gout[j] * kernels::unary_grad(*kind, x[j], y[j]);
            }
        }
        Op::Softmax { input, axis } => {
            let y = nodes[i].value.data();
            let shape = nodes[i].value.shape();
            kernels::softmax_backward(y, gout, shape, *axis, &mut grads[input.0]);
        }
        Op::GlobalAvgPool1d { input, batch, len, c } => {
            kernels::global_avg_pool_backward(gout, *batch, *len, *c, &mut grads[input.0]);
        }
        Op::Reshape { input } => {
            axpy(&mut grads[input.0], gout);
        }
        Op::Dropout { input, mask } => {
            for (g, (go, m)) in grads[input.0].iter_mut().zip(gout.iter().zip(mask)) {
                *g += go * m;
            }
        }
        Op::Matmul { lhs, rhs, trans_b, rhs_batched, batch, m, k, n } => {
            let a = nodes[lhs.0].value.data();
            let b = nodes[rhs.0].value.data();
            // dA, computed into a temp so lhs == rhs (self-attention) stays safe.
            let mut da = vec![0.0; a.len()];
            if *trans_b {
                // C = A @ B^T  =>  dA = dC @ B
                kernels::matmul(gout, b, *batch, *m, *n, *k, *rhs_batched, false, &mut da);
            } else {
                // C = A @ B    =>  dA = dC @ B^T
                kernels::matmul(gout, b, *batch, *m, *n, *k, *rhs_batched, true, &mut da);
            }
            let mut db = vec![0.0; b.len()];
            if *trans_b {
                // dB[j, :] += sum over rows of dC^T @ A, per batch when batched
                for bt in 0..*batch {
                    let dc = &gout[bt * m * n..(bt + 1) * m * n];
                    let ab = &a[bt * m * k..(bt + 1) * m * k];
                    let off = if *rhs_batched { bt * n * k } else { 0 };
                    kernels::matmul_tn_accum(dc, ab, *m, *n, *k, &mut db[off..off + n * k]);
                }
            } else {
                // dB = A^T @ dC, summed over the batch when shared
                for bt in 0..*batch {
                    let dc = &gout[bt * m * n..(bt + 1) * m * n];
                    let ab = &a[bt * m * k..(bt + 1) * m * k];
                    let off = if *rhs_batched { bt * k * n } else { 0 };
                    kernels::matmul_tn_accum(ab, dc, *m, *k, *n, &mut db[off..off + k * n]);
                }
            }
            axpy(&mut grads[lhs.0], &da);
            axpy(&mut grads[rhs.0], &db);
        }
        Op::PairwiseSum { lhs, rhs, batch, p, q, d } => {
            let mut da = vec![0.0; batch * p * d];
            let mut db = vec![0.0; batch * q * d];
            for bt in 0..*batch {
                for ii in 0..*p {
                    for jj in 0..*q {
                        let go = &gout[((bt * p + ii) * q + jj) * d..((bt * p + ii) * q + jj + 1) * d];
                        let ar = &mut da[(bt * p + ii) * d..(bt * p + ii + 1) * d];
                        let br = &mut db[(bt * q + jj) * d..(bt * q + jj + 1) * d];
                        for c in 0..*d {
                            ar[c] += go[c];
                            br[c] += go[c];
                        }
                    }
                }
            }
            axpy(&mut grads[lhs.0], &da);
            axpy(&mut grads[rhs.0], &db);
        }
        Op::BinaryCe { probs, targets } => {
            kernels::binary_ce_backward(
                nodes[probs.0].value.data(),
                targets,
                gout[0],
                &mut grads[probs.0],
            );
        }
        Op::CategoricalCe { probs, targets, classes } => {
            kernels::categorical_ce_backward(
                nodes[probs.0].value.data(),
                targets,
                *classes,
                gout[0],
                &mut grads[probs.0],
            );
        }
    }
}
