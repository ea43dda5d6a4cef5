use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

/// Floor used to keep logarithms finite: `log_clamped(x) = ln(max(x, LOG_CLAMP))`.
pub const LOG_CLAMP: f64 = 1e-12;

/// Epsilon inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: ValueId, b: ValueId },
    Transpose { x: ValueId },
    Add { a: ValueId, b: ValueId },
    AddBias { x: ValueId, bias: ValueId },
    Affine { x: ValueId, mul: f64 },
    Mul { a: ValueId, b: ValueId },
    Relu { x: ValueId },
    Sigmoid { x: ValueId },
    LogClamped { x: ValueId },
    SoftmaxRows { x: ValueId },
    LayerNorm { x: ValueId, gamma: ValueId, beta: ValueId },
    Concat { parts: Vec<ValueId>, axis: usize },
    SliceRows { x: ValueId, start: usize },
    SliceCols { x: ValueId, start: usize },
    Reshape { x: ValueId },
    Sum { x: ValueId },
}

struct Node {
    op: Op,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`ValueId`].
///
/// Every `requires_grad` value gets an entry; values unreachable from the
/// loss get an all-zero gradient.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: ValueId) -> Option<&[f64]> {
        self.grads[id.0].as_deref()
    }

    pub fn take(&mut self, id: ValueId) -> Option<Vec<f64>> {
        self.grads[id.0].take()
    }
}

/// Record of forward operations supporting a single reverse sweep.
///
/// Nodes are appended in execution order, so the vector itself is a
/// topological order: every input of a node precedes it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Insert a tensor as a leaf, sharing its buffer.
    pub fn leaf(&mut self, t: &Tensor) -> ValueId {
        self.push(Op::Leaf, t.shape().to_vec(), t.buffer(), t.requires_grad)
    }

    /// Insert a non-differentiable constant.
    pub fn constant(&mut self, data: Vec<f64>, shape: &[usize]) -> ValueId {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.push(Op::Leaf, shape.to_vec(), Arc::new(data), false)
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: ValueId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn to_tensor(&self, id: ValueId) -> Tensor {
        let node = &self.nodes[id.0];
        Tensor::new(node.data.to_vec(), &node.shape).expect("node shape consistent")
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, data: Arc<Vec<f64>>, requires_grad: bool) -> ValueId {
        self.nodes.push(Node {
            op,
            shape,
            data,
            requires_grad,
        });
        ValueId(self.nodes.len() - 1)
    }

    fn push_from(&mut self, op: Op, shape: Vec<usize>, data: Vec<f64>, inputs: &[ValueId]) -> ValueId {
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        self.push(op, shape, Arc::new(data), requires_grad)
    }

    fn dims2(&self, id: ValueId) -> (usize, usize) {
        match self.nodes[id.0].shape.as_slice() {
            [n] => (1, *n),
            [m, n] => (*m, *n),
            s => panic!("expected rank <= 2, got {s:?}"),
        }
    }

    // ── forward ops ─────────────────────────────────────────────────────

    /// `[m×k] · [k×n] -> [m×n]`
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (m, ka) = self.dims2(a);
        let (kb, n) = self.dims2(b);
        if ka != kb {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.nodes[a.0].shape.clone(),
                right: self.nodes[b.0].shape.clone(),
            });
        }
        let c = matmul_kernel(self.value(a), self.value(b), m, ka, n);
        Ok(self.push_from(Op::MatMul { a, b }, vec![m, n], c, &[a, b]))
    }

    pub fn transpose(&mut self, x: ValueId) -> Result<ValueId> {
        let (m, n) = self.dims2(x);
        let out = transpose_kernel(self.value(x), m, n);
        Ok(self.push_from(Op::Transpose { x }, vec![n, m], out, &[x]))
    }

    /// Elementwise sum of two same-shape values.
    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: self.nodes[a.0].shape.clone(),
                right: self.nodes[b.0].shape.clone(),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push_from(Op::Add { a, b }, shape, out, &[a, b]))
    }

    /// Add a rank-1 bias `[n]` to every row of `[m×n]`.
    pub fn add_bias(&mut self, x: ValueId, bias: ValueId) -> Result<ValueId> {
        let (m, n) = self.dims2(x);
        if self.nodes[bias.0].shape != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: self.nodes[x.0].shape.clone(),
                right: self.nodes[bias.0].shape.clone(),
            });
        }
        let bv = self.value(bias).to_vec();
        let mut out = self.value(x).to_vec();
        for r in 0..m {
            for c in 0..n {
                out[r * n + c] += bv[c];
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push_from(Op::AddBias { x, bias }, shape, out, &[x, bias]))
    }

    /// `mul * x + add`, elementwise with scalar coefficients.
    pub fn affine(&mut self, x: ValueId, mul: f64, add: f64) -> ValueId {
        let out: Vec<f64> = self.value(x).iter().map(|v| mul * v + add).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push_from(Op::Affine { x, mul }, shape, out, &[x])
    }

    /// Elementwise product (also the dropout-mask application).
    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                left: self.nodes[a.0].shape.clone(),
                right: self.nodes[b.0].shape.clone(),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        Ok(self.push_from(Op::Mul { a, b }, shape, out, &[a, b]))
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let out: Vec<f64> = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push_from(Op::Relu { x }, shape, out, &[x])
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let out: Vec<f64> = self.value(x).iter().map(|v| sigmoid_scalar(*v)).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push_from(Op::Sigmoid { x }, shape, out, &[x])
    }

    /// `ln(max(x, 1e-12))`; the clamp keeps the output finite for x near 0.
    pub fn log_clamped(&mut self, x: ValueId) -> ValueId {
        let out: Vec<f64> = self.value(x).iter().map(|v| v.max(LOG_CLAMP).ln()).collect();
        let shape = self.nodes[x.0].shape.clone();
        self.push_from(Op::LogClamped { x }, shape, out, &[x])
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, x: ValueId) -> Result<ValueId> {
        if self.value(x).iter().any(|v| v.is_nan()) {
            return Err(TensorError::Contract("softmax_rows on NaN input".into()));
        }
        let (m, n) = self.dims2(x);
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &self.value(x)[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let dst = &mut out[r * n..(r + 1) * n];
            let mut sum = 0.0;
            for (d, &v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
                sum += *d;
            }
            for d in dst.iter_mut() {
                *d /= sum;
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push_from(Op::SoftmaxRows { x }, shape, out, &[x]))
    }

    /// Per-row normalization to zero mean / unit variance, then `gamma ⊙ x̂ + beta`.
    pub fn layer_norm(&mut self, x: ValueId, gamma: ValueId, beta: ValueId) -> Result<ValueId> {
        let (m, n) = self.dims2(x);
        if self.nodes[gamma.0].shape != [n] || self.nodes[beta.0].shape != [n] {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: self.nodes[x.0].shape.clone(),
                right: self.nodes[gamma.0].shape.clone(),
            });
        }
        let g = self.value(gamma).to_vec();
        let b = self.value(beta).to_vec();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let row = &self.value(x)[r * n..(r + 1) * n];
            let (mean, inv_std) = row_moments(row);
            for c in 0..n {
                out[r * n + c] = g[c] * ((row[c] - mean) * inv_std) + b[c];
            }
        }
        let shape = self.nodes[x.0].shape.clone();
        Ok(self.push_from(Op::LayerNorm { x, gamma, beta }, shape, out, &[x, gamma, beta]))
    }

    /// Concatenate along `axis` (0 or 1). Rank-1 inputs concatenate along axis 0.
    pub fn concat(&mut self, parts: &[ValueId], axis: usize) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(TensorError::Contract("concat of zero tensors".into()));
        }
        if parts.len() == 1 {
            // Identity; still recorded so gradients flow through uniformly.
            return self.reshape(parts[0], &self.nodes[parts[0].0].shape.clone());
        }
        let rank1 = self.nodes[parts[0].0].shape.len() == 1;
        if rank1 {
            if axis != 0 {
                return Err(TensorError::Contract("rank-1 concat requires axis 0".into()));
            }
            let mut out = Vec::new();
            for &p in parts {
                if self.nodes[p.0].shape.len() != 1 {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        left: self.nodes[parts[0].0].shape.clone(),
                        right: self.nodes[p.0].shape.clone(),
                    });
                }
                out.extend_from_slice(self.value(p));
            }
            let shape = vec![out.len()];
            return Ok(self.push_from(
                Op::Concat {
                    parts: parts.to_vec(),
                    axis: 0,
                },
                shape,
                out,
                parts,
            ));
        }
        match axis {
            0 => {
                let (_, n0) = self.dims2(parts[0]);
                let mut rows = 0;
                let mut out = Vec::new();
                for &p in parts {
                    let (m, n) = self.dims2(p);
                    if n != n0 {
                        return Err(TensorError::ShapeMismatch {
                            op: "concat",
                            left: self.nodes[parts[0].0].shape.clone(),
                            right: self.nodes[p.0].shape.clone(),
                        });
                    }
                    rows += m;
                    out.extend_from_slice(self.value(p));
                }
                Ok(self.push_from(
                    Op::Concat {
                        parts: parts.to_vec(),
                        axis: 0,
                    },
                    vec![rows, n0],
                    out,
                    parts,
                ))
            }
            1 => {
                let (m0, _) = self.dims2(parts[0]);
                let widths: Vec<usize> = parts.iter().map(|&p| self.dims2(p).1).collect();
                for &p in parts {
                    let (m, _) = self.dims2(p);
                    if m != m0 {
                        return Err(TensorError::ShapeMismatch {
                            op: "concat",
                            left: self.nodes[parts[0].0].shape.clone(),
                            right: self.nodes[p.0].shape.clone(),
                        });
                    }
                }
                let total: usize = widths.iter().sum();
                let mut out = vec![0.0; m0 * total];
                for r in 0..m0 {
                    let mut col = 0;
                    for (i, &p) in parts.iter().enumerate() {
                        let w = widths[i];
                        let src = &self.value(p)[r * w..(r + 1) * w];
                        out[r * total + col..r * total + col + w].copy_from_slice(src);
                        col += w;
                    }
                }
                Ok(self.push_from(
                    Op::Concat {
                        parts: parts.to_vec(),
                        axis: 1,
                    },
                    vec![m0, total],
                    out,
                    parts,
                ))
            }
            _ => Err(TensorError::Contract(format!("concat axis {axis} unsupported"))),
        }
    }

    pub fn slice_rows(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let (m, n) = self.dims2(x);
        if start + len > m || len == 0 {
            return Err(TensorError::Contract(format!(
                "slice_rows [{start}, {}) out of {m} rows",
                start + len
            )));
        }
        let out = self.value(x)[start * n..(start + len) * n].to_vec();
        Ok(self.push_from(Op::SliceRows { x, start }, vec![len, n], out, &[x]))
    }

    pub fn slice_cols(&mut self, x: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let (m, n) = self.dims2(x);
        if start + len > n || len == 0 {
            return Err(TensorError::Contract(format!(
                "slice_cols [{start}, {}) out of {n} cols",
                start + len
            )));
        }
        let mut out = vec![0.0; m * len];
        for r in 0..m {
            out[r * len..(r + 1) * len]
                .copy_from_slice(&self.value(x)[r * n + start..r * n + start + len]);
        }
        Ok(self.push_from(Op::SliceCols { x, start }, vec![m, len], out, &[x]))
    }

    pub fn reshape(&mut self, x: ValueId, shape: &[usize]) -> Result<ValueId> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                len: self.value(x).len(),
            });
        }
        let out = self.value(x).to_vec();
        Ok(self.push_from(Op::Reshape { x }, shape.to_vec(), out, &[x]))
    }

    /// Sum of all elements, as a `[1]` scalar.
    pub fn sum(&mut self, x: ValueId) -> ValueId {
        let s: f64 = self.value(x).iter().sum();
        self.push_from(Op::Sum { x }, vec![1], vec![s], &[x])
    }

    /// Apply a precomputed dropout mask (entries 0 or 1/(1-rate)).
    pub fn dropout(&mut self, x: ValueId, mask: &[f64]) -> Result<ValueId> {
        if mask.len() != self.value(x).len() {
            return Err(TensorError::Contract(format!(
                "dropout mask of {} elements on value of {}",
                mask.len(),
                self.value(x).len()
            )));
        }
        let shape = self.nodes[x.0].shape.clone();
        let m = self.constant(mask.to_vec(), &shape);
        self.mul(x, m)
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Visits each node exactly once in
    /// reverse topological order.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = self
            .nodes
            .iter()
            .map(|n| {
                if n.requires_grad {
                    Some(vec![0.0; n.data.len()])
                } else {
                    None
                }
            })
            .collect();
        if grads[loss.0].is_none() {
            // Loss does not depend on any requires_grad leaf.
            return Ok(Gradients { grads });
        }
        grads[loss.0].as_mut().unwrap()[0] = 1.0;

        for i in (0..=loss.0).rev() {
            if grads[i].is_none() {
                continue;
            }
            let upstream = grads[i].take().unwrap();
            self.accumulate(i, &upstream, &mut grads);
            grads[i] = Some(upstream);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, i: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = self.dims2(*a);
                let (_, n) = self.dims2(*b);
                if let Some(ga) = grads[a.0].as_mut() {
                    // dA += dC · Bᵀ
                    let bt = transpose_kernel(self.value(*b), k, n);
                    let d = matmul_kernel(up, &bt, m, n, k);
                    axpy(ga, &d);
                }
                if let Some(gb) = grads[b.0].as_mut() {
                    // dB += Aᵀ · dC
                    let at = transpose_kernel(self.value(*a), m, k);
                    let d = matmul_kernel(&at, up, k, m, n);
                    axpy(gb, &d);
                }
            }
            Op::Transpose { x } => {
                if let Some(gx) = grads[x.0].as_mut() {
                    let (n, m) = {
                        let s = &node.shape;
                        (s[0], s[1])
                    };
                    let d = transpose_kernel(up, n, m);
                    axpy(gx, &d);
                }
            }
            Op::Add { a, b } => {
                if let Some(ga) = grads[a.0].as_mut() {
                    axpy(ga, up);
                }
                if let Some(gb) = grads[b.0].as_mut() {
                    axpy(gb, up);
                }
            }
            Op::AddBias { x, bias } => {
                if let Some(gx) = grads[x.0].as_mut() {
                    axpy(gx, up);
                }
                if let Some(gb) = grads[bias.0].as_mut() {
                    let n = gb.len();
                    for (idx, v) in up.iter().enumerate() {
                        gb[idx % n] += v;
                    }
                }
            }
            Op::Affine { x, mul } => {
                if let Some(gx) = grads[x.0].as_mut() {
                    for (g, u) in gx.iter_mut().zip(up) {
                        *g += mul * u;
                    }
                }
            }
            Op::Mul { a, b } => {
                if let Some(ga) = grads[a.0].as_mut() {
                    for ((g, u), bv) in ga.iter_mut().zip(up).zip(self.value(*b)) {
                        *g += u * bv;
                    }
                }
                if let Some(gb) = grads[b.0].as_mut() {
                    for ((g, u), av) in gb.iter_mut().zip(up).zip(self.value(*a)) {
                        *g += u * av;
                    }
                }
            }
            Op::Relu { x } => {
                if let Some(gx) = grads[x.0].as_mut() {
                    for ((g, u), xv) in gx.iter_mut().zip(up).zip(self.value(*x)) {
                        if *xv > 0.0 {
                            *g += u;
                        }
                    }
                }
            }
            Op::Sigmoid { x } => {
                if let Some(gx) = grads[x.0].as_mut() {
                    for ((g, u), y) in gx.iter_mut().zip(up).zip(node.data.iter()) {
                        *g += u * y * (1.0 - y);
                    }
                }
            }
            Op::LogClamped { x } => {
                if let Some(gx) = grads[x.0].as_mut() {
                    for ((g, u), xv) in gx.iter_mut().zip(up).zip(self.value(*x)) {
                        if *xv > LOG_CLAMP {
                            *g += u / xv;
                        }
                    }
                }
            }
            Op::SoftmaxRows { x } => {
                if let Some(gx) = grads[x.0].as_mut() {
                    let (m, n) = self.dims2(*x);
                    let y = &node.data;
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let ur = &up[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(ur).map(|(a, b)| a * b).sum();
                        let dst = &mut gx[r * n..(r + 1) * n];
                        for c in 0..n {
                            dst[c] += yr[c] * (ur[c] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm { x, gamma, beta } => {
                let (m, n) = self.dims2(*x);
                let g = self.value(*gamma);
                for r in 0..m {
                    let row = &self.value(*x)[r * n..(r + 1) * n];
                    let (mean, inv_std) = row_moments(row);
                    let ur = &up[r * n..(r + 1) * n];
                    // dgamma, dbeta
                    if let Some(gg) = grads[gamma.0].as_mut() {
                        for c in 0..n {
                            gg[c] += ur[c] * (row[c] - mean) * inv_std;
                        }
                    }
                    if let Some(gb) = grads[beta.0].as_mut() {
                        for c in 0..n {
                            gb[c] += ur[c];
                        }
                    }
                    if let Some(gx) = grads[x.0].as_mut() {
                        // dx = inv_std * (h - mean(h) - x̂ * mean(h ⊙ x̂)),  h = gamma ⊙ dy
                        let mut mean_h = 0.0;
                        let mut mean_hx = 0.0;
                        for c in 0..n {
                            let h = g[c] * ur[c];
                            let xh = (row[c] - mean) * inv_std;
                            mean_h += h;
                            mean_hx += h * xh;
                        }
                        mean_h /= n as f64;
                        mean_hx /= n as f64;
                        let dst = &mut gx[r * n..(r + 1) * n];
                        for c in 0..n {
                            let h = g[c] * ur[c];
                            let xh = (row[c] - mean) * inv_std;
                            dst[c] += inv_std * (h - mean_h - xh * mean_hx);
                        }
                    }
                }
            }
            Op::Concat { parts, axis } => match axis {
                0 => {
                    let mut off = 0;
                    for &p in parts {
                        let len = self.value(p).len();
                        if let Some(gp) = grads[p.0].as_mut() {
                            axpy(gp, &up[off..off + len]);
                        }
                        off += len;
                    }
                }
                _ => {
                    let (m, total) = (node.shape[0], node.shape[1]);
                    let widths: Vec<usize> = parts.iter().map(|&p| self.dims2(p).1).collect();
                    for r in 0..m {
                        let mut col = 0;
                        for (idx, &p) in parts.iter().enumerate() {
                            let w = widths[idx];
                            if let Some(gp) = grads[p.0].as_mut() {
                                for c in 0..w {
                                    gp[r * w + c] += up[r * total + col + c];
                                }
                            }
                            col += w;
                        }
                    }
                }
            },
            Op::SliceRows { x, start } => {
                if let Some(gx) = grads[x.0].as_mut() {
                    let n = node.shape[1];
                    let dst = &mut gx[start * n..start * n + up.len()];
                    axpy(dst, up);
                }
            }
            Op::SliceCols { x, start } => {
                if let Some(gx) = grads[x.0].as_mut() {
                    let (m, w) = (node.shape[0], node.shape[1]);
                    let n = self.dims2(*x).1;
                    for r in 0..m {
                        for c in 0..w {
                            gx[r * n + start + c] += up[r * w + c];
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if let Some(gx) = grads[x.0].as_mut() {
                    axpy(gx, up);
                }
            }
            Op::Sum { x } => {
                if let Some(gx) = grads[x.0].as_mut() {
                    let u = up[0];
                    for g in gx.iter_mut() {
                        *g += u;
                    }
                }
            }
        }
    }
}

fn sigmoid_scalar(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

fn axpy(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += av * bv;
                }
            }
        }
    }
    c
}

pub(crate) fn transpose_kernel(x: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        for c in 0..n {
            out[c * m + r] = x[r * n + c];
        }
    }
    out
}
