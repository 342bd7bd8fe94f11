//! Low-level numeric kernels shared by the pure ops and the tape.
//!
//! Convolution parallelizes over fixed-size batch chunks; weight-gradient
//! partials are merged in chunk order so results are bitwise identical
//! whether or not rayon splits the work.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Activation, Tensor, PROB_EPSILON};

/// Samples per rayon task. Fixed so chunk boundaries (and therefore the f64
/// accumulation order) never depend on the thread count.
const BATCH_CHUNK: usize = 16;
/// Below this many multiply-adds the parallel dispatch costs more than it buys.
const PAR_MIN_WORK: usize = 1 << 21;

#[derive(Debug, Clone, Copy)]
pub struct Conv1dDims {
    pub batch: usize,
    pub len: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub out_len: usize,
    pub pad_left: usize,
}

impl Conv1dDims {
    pub fn new(
        batch: usize,
        len: usize,
        c_in: usize,
        kernels: &Tensor,
        bias: &Tensor,
        stride: usize,
    ) -> Result<Self> {
        let ks = kernels.shape();
        if ks.len() != 3 {
            return Err(Error::Shape(format!(
                "conv1d kernels must be [c_out, c_in, k], got {ks:?}"
            )));
        }
        let (c_out, kc_in, k) = (ks[0], ks[1], ks[2]);
        if kc_in != c_in {
            return Err(Error::Shape(format!(
                "conv1d input has {c_in} channels but kernels expect {kc_in}"
            )));
        }
        if bias.shape() != [c_out] {
            return Err(Error::Shape(format!(
                "conv1d bias shape {:?} != [{c_out}]",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::Usage("conv1d stride must be >= 1".into()));
        }
        if k % 2 == 0 {
            return Err(Error::Usage(format!(
                "'same' padding requires an odd kernel size, got {k}"
            )));
        }
        if len == 0 {
            return Err(Error::Usage("conv1d over zero-length input".into()));
        }
        let out_len = len.div_ceil(stride);
        let span = (out_len - 1) * stride + k;
        let pad_total = span.saturating_sub(len);
        // Left-biased: the odd leftover column of padding goes on the left.
        let pad_left = pad_total.div_ceil(2);
        Ok(Conv1dDims {
            batch,
            len,
            c_in,
            c_out,
            k,
            stride,
            out_len,
            pad_left,
        })
    }

    fn in_stride(&self) -> usize {
        self.len * self.c_in
    }

    fn out_stride(&self) -> usize {
        self.out_len * self.c_out
    }

    fn work(&self) -> usize {
        self.batch * self.out_len * self.c_out * self.c_in * self.k
    }
}

/// Kernel tensor reordered as `[k][c_in][c_out]` so the innermost loop runs
/// over contiguous output channels.
fn transpose_kernels(ker: &[f64], d: &Conv1dDims) -> Vec<f64> {
    let mut kt = vec![0.0; ker.len()];
    for o in 0..d.c_out {
        for ci in 0..d.c_in {
            for j in 0..d.k {
                kt[(j * d.c_in + ci) * d.c_out + o] = ker[(o * d.c_in + ci) * d.k + j];
            }
        }
    }
    kt
}

pub fn conv1d_forward(x: &[f64], ker: &[f64], bias: &[f64], d: &Conv1dDims, out: &mut [f64]) {
    let kt = transpose_kernels(ker, d);
    let run = |xs: &[f64], os: &mut [f64]| {
        let nb = os.len() / d.out_stride();
        for b in 0..nb {
            let xb = &xs[b * d.in_stride()..(b + 1) * d.in_stride()];
            let ob = &mut os[b * d.out_stride()..(b + 1) * d.out_stride()];
            for t in 0..d.out_len {
                let orow = &mut ob[t * d.c_out..(t + 1) * d.c_out];
                orow.copy_from_slice(bias);
                let base = (t * d.stride) as isize - d.pad_left as isize;
                for j in 0..d.k {
                    let pos = base + j as isize;
                    if pos < 0 || pos >= d.len as isize {
                        continue;
                    }
                    let xrow = &xb[pos as usize * d.c_in..pos as usize * d.c_in + d.c_in];
                    let ktj = &kt[j * d.c_in * d.c_out..(j + 1) * d.c_in * d.c_out];
                    for ci in 0..d.c_in {
                        let xv = xrow[ci];
                        let krow = &ktj[ci * d.c_out..(ci + 1) * d.c_out];
                        for (ov, kv) in orow.iter_mut().zip(krow) {
                            *ov += xv * kv;
                        }
                    }
                }
            }
        }
    };
    if d.batch > BATCH_CHUNK && d.work() > PAR_MIN_WORK {
        out.par_chunks_mut(BATCH_CHUNK * d.out_stride())
            .zip(x.par_chunks(BATCH_CHUNK * d.in_stride()))
            .for_each(|(os, xs)| run(xs, os));
    } else {
        run(x, out);
    }
}

/// Accumulates input, kernel, and bias gradients for a conv1d node.
pub fn conv1d_backward(
    x: &[f64],
    ker: &[f64],
    dy: &[f64],
    d: &Conv1dDims,
    dx: &mut [f64],
    dker: &mut [f64],
    dbias: &mut [f64],
) {
    let kt = transpose_kernels(ker, d);
    // Per-chunk pass producing the chunk's dx slice in place plus local
    // kernel/bias partials; partials merge afterwards in chunk order.
    let run = |xs: &[f64], dys: &[f64], dxs: &mut [f64]| -> (Vec<f64>, Vec<f64>) {
        let nb = dys.len() / d.out_stride();
        let mut dkt = vec![0.0; kt.len()];
        let mut dbias_part = vec![0.0; d.c_out];
        for b in 0..nb {
            let xb = &xs[b * d.in_stride()..(b + 1) * d.in_stride()];
            let dyb = &dys[b * d.out_stride()..(b + 1) * d.out_stride()];
            let dxb = &mut dxs[b * d.in_stride()..(b + 1) * d.in_stride()];
            for t in 0..d.out_len {
                let dyrow = &dyb[t * d.c_out..(t + 1) * d.c_out];
                for (bv, dv) in dbias_part.iter_mut().zip(dyrow) {
                    *bv += dv;
                }
                let base = (t * d.stride) as isize - d.pad_left as isize;
                for j in 0..d.k {
                    let pos = base + j as isize;
                    if pos < 0 || pos >= d.len as isize {
                        continue;
                    }
                    let p = pos as usize;
                    let xrow = &xb[p * d.c_in..(p + 1) * d.c_in];
                    let dxrow = &mut dxb[p * d.c_in..(p + 1) * d.c_in];
                    let ktj = &kt[j * d.c_in * d.c_out..(j + 1) * d.c_in * d.c_out];
                    let dktj = &mut dkt[j * d.c_in * d.c_out..(j + 1) * d.c_in * d.c_out];
                    for ci in 0..d.c_in {
                        let krow = &ktj[ci * d.c_out..(ci + 1) * d.c_out];
                        let dkrow = &mut dktj[ci * d.c_out..(ci + 1) * d.c_out];
                        let xv = xrow[ci];
                        let mut acc = 0.0;
                        for o in 0..d.c_out {
                            acc += dyrow[o] * krow[o];
                            dkrow[o] += xv * dyrow[o];
                        }
                        dxrow[ci] += acc;
                    }
                }
            }
        }
        (dkt, dbias_part)
    };

    let partials: Vec<(Vec<f64>, Vec<f64>)> =
        if d.batch > BATCH_CHUNK && d.work() > PAR_MIN_WORK {
            dx.par_chunks_mut(BATCH_CHUNK * d.in_stride())
                .zip(x.par_chunks(BATCH_CHUNK * d.in_stride()))
                .zip(dy.par_chunks(BATCH_CHUNK * d.out_stride()))
                .map(|((dxs, xs), dys)| run(xs, dys, dxs))
                .collect()
        } else {
            vec![run(x, dy, dx)]
        };

    let mut dkt_total = vec![0.0; kt.len()];
    for (dkt, dbias_part) in &partials {
        for (a, b) in dkt_total.iter_mut().zip(dkt) {
            *a += b;
        }
        for (a, b) in dbias.iter_mut().zip(dbias_part) {
            *a += b;
        }
    }
    // un-transpose [k][c_in][c_out] -> [c_out][c_in][k]
    for o in 0..d.c_out {
        for ci in 0..d.c_in {
            for j in 0..d.k {
                dker[(o * d.c_in + ci) * d.k + j] += dkt_total[(j * d.c_in + ci) * d.c_out + o];
            }
        }
    }
}

pub fn dense_dims(
    input: &[usize],
    weight: &[usize],
    bias: Option<&[usize]>,
) -> Result<(usize, usize, usize)> {
    if weight.len() != 2 {
        return Err(Error::Shape(format!(
            "dense weight must be [d_in, d_out], got {weight:?}"
        )));
    }
    let (d_in, d_out) = (weight[0], weight[1]);
    let last = *input
        .last()
        .ok_or_else(|| Error::Shape("dense input must have at least one axis".into()))?;
    if last != d_in {
        return Err(Error::Shape(format!(
            "dense input trailing extent {last} != weight d_in {d_in}"
        )));
    }
    if let Some(bs) = bias {
        if bs != [d_out] {
            return Err(Error::Shape(format!("dense bias shape {bs:?} != [{d_out}]")));
        }
    }
    let rows: usize = input[..input.len() - 1].iter().product();
    Ok((rows, d_in, d_out))
}

pub fn dense_forward(
    x: &[f64],
    w: &[f64],
    bias: Option<&[f64]>,
    rows: usize,
    d_in: usize,
    d_out: usize,
    out: &mut [f64],
) {
    for r in 0..rows {
        let xr = &x[r * d_in..(r + 1) * d_in];
        let or = &mut out[r * d_out..(r + 1) * d_out];
        match bias {
            Some(b) => or.copy_from_slice(b),
            None => or.fill(0.0),
        }
        for (i, &xv) in xr.iter().enumerate() {
            let wr = &w[i * d_out..(i + 1) * d_out];
            for (ov, wv) in or.iter_mut().zip(wr) {
                *ov += xv * wv;
            }
        }
    }
}

pub fn dense_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    rows: usize,
    d_in: usize,
    d_out: usize,
    dx: &mut [f64],
    dw: &mut [f64],
    dbias: Option<&mut [f64]>,
) {
    for r in 0..rows {
        let xr = &x[r * d_in..(r + 1) * d_in];
        let dyr = &dy[r * d_out..(r + 1) * d_out];
        let dxr = &mut dx[r * d_in..(r + 1) * d_in];
        for i in 0..d_in {
            let wr = &w[i * d_out..(i + 1) * d_out];
            let dwr = &mut dw[i * d_out..(i + 1) * d_out];
            let xv = xr[i];
            let mut acc = 0.0;
            for o in 0..d_out {
                acc += dyr[o] * wr[o];
                dwr[o] += xv * dyr[o];
            }
            dxr[i] += acc;
        }
    }
    if let Some(db) = dbias {
        for r in 0..rows {
            let dyr = &dy[r * d_out..(r + 1) * d_out];
            for (bv, dv) in db.iter_mut().zip(dyr) {
                *bv += dv;
            }
        }
    }
}

/// Batched matmul `C = A @ B` (or `A @ B^T`). `A` is `[batch, m, k]`; `B` is
/// `[k, n]` shared across the batch or `[batch, k, n]` when `b_batched`.
pub fn matmul(
    a: &[f64],
    b: &[f64],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    b_batched: bool,
    trans_b: bool,
    out: &mut [f64],
) {
    out.fill(0.0);
    for bt in 0..batch {
        let ab = &a[bt * m * k..(bt + 1) * m * k];
        let bb = if b_batched {
            &b[bt * k * n..(bt + 1) * k * n]
        } else {
            b
        };
        let ob = &mut out[bt * m * n..(bt + 1) * m * n];
        if trans_b {
            // bb is [n, k]
            for i in 0..m {
                let ar = &ab[i * k..(i + 1) * k];
                let or = &mut ob[i * n..(i + 1) * n];
                for j in 0..n {
                    let br = &bb[j * k..(j + 1) * k];
                    let mut acc = 0.0;
                    for p in 0..k {
                        acc += ar[p] * br[p];
                    }
                    or[j] = acc;
                }
            }
        } else {
            for i in 0..m {
                let ar = &ab[i * k..(i + 1) * k];
                let or = &mut ob[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = ar[p];
                    let br = &bb[p * n..(p + 1) * n];
                    for j in 0..n {
                        or[j] += av * br[j];
                    }
                }
            }
        }
    }
}

/// `out[i, j] += sum_r a[r, i] * b[r, j]` — the `A^T @ B` used for weight grads.
pub fn matmul_tn_accum(a: &[f64], b: &[f64], rows: usize, i_dim: usize, j_dim: usize, out: &mut [f64]) {
    for r in 0..rows {
        let ar = &a[r * i_dim..(r + 1) * i_dim];
        let br = &b[r * j_dim..(r + 1) * j_dim];
        for i in 0..i_dim {
            let av = ar[i];
            let or = &mut out[i * j_dim..(i + 1) * j_dim];
            for j in 0..j_dim {
                or[j] += av * br[j];
            }
        }
    }
}

pub fn apply_unary(kind: Activation, v: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if v > 0.0 {
                v
            } else {
                0.0
            }
        }
        Activation::LeakyRelu { alpha } => {
            if v > 0.0 {
                v
            } else {
                alpha * v
            }
        }
        Activation::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        Activation::Tanh => v.tanh(),
        Activation::Softmax => unreachable!("softmax is not elementwise"),
    }
}

/// d(activation)/d(input) expressed via input `x` and output `y`.
pub fn unary_grad(kind: Activation, x: f64, y: f64) -> f64 {
    match kind {
        Activation::Relu => {
            if x > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::LeakyRelu { alpha } => {
            if x > 0.0 {
                1.0
            } else {
                alpha
            }
        }
        Activation::Sigmoid => y * (1.0 - y),
        Activation::Tanh => 1.0 - y * y,
        Activation::Softmax => unreachable!("softmax is not elementwise"),
    }
}

/// Max-subtracted softmax along an arbitrary axis.
pub fn softmax_axis(x: &[f64], shape: &[usize], axis: usize, out: &mut [f64]) {
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for ou in 0..outer {
        for inn in 0..inner {
            let base = ou * n * inner + inn;
            let mut mx = f64::NEG_INFINITY;
            for i in 0..n {
                mx = mx.max(x[base + i * inner]);
            }
            let mut sum = 0.0;
            for i in 0..n {
                let e = (x[base + i * inner] - mx).exp();
                out[base + i * inner] = e;
                sum += e;
            }
            let inv = 1.0 / sum;
            for i in 0..n {
                out[base + i * inner] *= inv;
            }
        }
    }
}

/// VJP of softmax: `dx_i = y_i * (dy_i - sum_j dy_j y_j)` per lane.
pub fn softmax_backward(y: &[f64], dy: &[f64], shape: &[usize], axis: usize, dx: &mut [f64]) {
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for ou in 0..outer {
        for inn in 0..inner {
            let base = ou * n * inner + inn;
            let mut dot = 0.0;
            for i in 0..n {
                dot += dy[base + i * inner] * y[base + i * inner];
            }
            for i in 0..n {
                dx[base + i * inner] += y[base + i * inner] * (dy[base + i * inner] - dot);
            }
        }
    }
}

pub fn global_avg_pool_forward(x: &[f64], batch: usize, len: usize, c: usize, out: &mut [f64]) {
    let inv = 1.0 / len as f64;
    for b in 0..batch {
        let xb = &x[b * len * c..(b + 1) * len * c];
        let ob = &mut out[b * c..(b + 1) * c];
        ob.fill(0.0);
        for t in 0..len {
            for ch in 0..c {
                ob[ch] += xb[t * c + ch];
            }
        }
        for v in ob.iter_mut() {
            *v *= inv;
        }
    }
}

pub fn global_avg_pool_backward(dy: &[f64], batch: usize, len: usize, c: usize, dx: &mut [f64]) {
    let inv = 1.0 / len as f64;
    for b in 0..batch {
        let dyb = &dy[b * c..(b + 1) * c];
        let dxb = &mut dx[b * len * c..(b + 1) * len * c];
        for t in 0..len {
            for ch in 0..c {
                dxb[t * c + ch] += dyb[ch] * inv;
            }
        }
    }
}

pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

pub fn binary_ce_forward(probs: &[f64], targets: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (&p, &y) in probs.iter().zip(targets) {
        let pc = clamp_prob(p);
        sum -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
    }
    sum / probs.len() as f64
}

/// dL/dp for the mean binary cross-entropy; zero where the clamp saturates.
pub fn binary_ce_backward(probs: &[f64], targets: &[f64], upstream: f64, dp: &mut [f64]) {
    let inv_n = upstream / probs.len() as f64;
    for i in 0..probs.len() {
        let p = probs[i];
        if p <= PROB_EPSILON || p >= 1.0 - PROB_EPSILON {
            continue;
        }
        let y = targets[i];
        dp[i] += inv_n * (-y / p + (1.0 - y) / (1.0 - p));
    }
}

pub fn categorical_ce_forward(probs: &[f64], targets: &[usize], classes: usize) -> f64 {
    let rows = targets.len();
    let mut sum = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        sum -= clamp_prob(probs[r * classes + t]).ln();
    }
    sum / rows as f64
}

pub fn categorical_ce_backward(
    probs: &[f64],
    targets: &[usize],
    classes: usize,
    upstream: f64,
    dp: &mut [f64],
) {
    let rows = targets.len();
    let inv_n = upstream / rows as f64;
    for (r, &t) in targets.iter().enumerate() {
        let p = probs[r * classes + t];
        if p <= PROB_EPSILON || p >= 1.0 - PROB_EPSILON {
            continue;
        }
        dp[r * classes + t] -= inv_n / p;
    }
}

pub fn one_hot_to_indices(targets: &[f64], rows: usize, classes: usize) -> Result<Vec<usize>> {
    let mut idx = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &targets[r * classes..(r + 1) * classes];
        let mut hot = None;
        for (c, &v) in row.iter().enumerate() {
            if v == 1.0 {
                if hot.is_some() {
                    return Err(Error::Domain(format!("target row {r} is not one-hot")));
                }
                hot = Some(c);
            } else if v != 0.0 {
                return Err(Error::Domain(format!("target row {r} is not one-hot")));
            }
        }
        idx.push(hot.ok_or_else(|| Error::Domain(format!("target row {r} has no hot class")))?);
    }
    Ok(idx)
}
