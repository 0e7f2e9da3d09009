//! Reverse-mode automatic differentiation on a linear tape.
//!
//! A [`Tape`] records every operation of one forward pass as a node with
//! an eagerly computed value. Nodes are created in topological order, so
//! the backward pass is a single reverse sweep that pushes gradients
//! from each node into its parents. Leaves bound to a [`ParamStore`]
//! entry collect their gradients back into the store afterwards.
//!
//! The op set is exactly what the encoder, the classification heads and
//! the losses need; each op carries its own backward rule. All reductions
//! run in a fixed sequential order, so a forward/backward pass is
//! bitwise reproducible.

use crate::error::{Error, Result};
use crate::numerics::functions::{gelu_grad_scalar, gelu_scalar, log_sum_exp, softmax_row};
use crate::numerics::params::ParamStore;
use crate::numerics::tensor::{matmul_nn, matmul_nt, matmul_tn, Tensor};
use crate::rng::Rng;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on the tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// out[r] = src[rows[r]] (row gather; also used for embedding lookup)
    GatherRows { src: NodeId, rows: Vec<u32> },
    MatMul { a: NodeId, b: NodeId },
    Transpose { src: NodeId },
    Add { a: NodeId, b: NodeId },
    /// matrix [m x n] + broadcast row [n]
    AddRow { mat: NodeId, row: NodeId },
    Scale { src: NodeId, factor: f64 },
    /// elementwise add of a constant bias (attention masking)
    MaskAdd { src: NodeId },
    Gelu { src: NodeId },
    /// per-row normalization over the last axis with learned gain/bias
    LayerNorm { src: NodeId, gain: NodeId, bias: NodeId },
    /// softmax along each row
    SoftmaxRows { src: NodeId },
    SliceRows { src: NodeId, start: usize },
    SliceCols { src: NodeId, start: usize },
    ConcatRows { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    /// elementwise multiply by a fixed 0-or-1/keep mask
    Dropout { src: NodeId, mask: Vec<f64> },
    /// mean cross-entropy over the rows that carry a target
    CrossEntropyMean { logits: NodeId, targets: Vec<Option<u32>>, n_labeled: usize },
    /// weighted sum of scalar nodes
    WeightedSum { parts: Vec<(NodeId, f64)> },
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bindings: Vec<(NodeId, String)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward target w.r.t. node `id`, if any.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf bound to a named parameter. Its gradient flows back into
    /// the store via [`Tape::accumulate_into`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<NodeId> {
        let value = store.get(name)?.value().clone();
        let id = self.push(Op::Leaf, value, true);
        self.bindings.push((id, name.to_string()));
        Ok(id)
    }

    pub fn gather_rows(&mut self, src: NodeId, rows: &[u32]) -> Result<NodeId> {
        let v = self.value(src);
        let (n, d) = (v.rows(), v.cols());
        if let Some(&bad) = rows.iter().find(|&&r| r as usize >= n) {
            return Err(Error::Numerics(format!("gather: row {bad} out of range for {n} rows")));
        }
        let mut out = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            out.extend_from_slice(v.row(r as usize));
        }
        let value = Tensor::matrix(rows.len(), d, out)?;
        let requires_grad = self.rg(src);
        Ok(self.push(Op::GatherRows { src, rows: rows.to_vec() }, value, requires_grad))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        let (m, k) = (va.rows(), va.cols());
        let (k2, n) = (vb.rows(), vb.cols());
        if k != k2 {
            return Err(Error::Numerics(format!(
                "matmul: inner dims differ ({m}x{k} vs {k2}x{n})"
            )));
        }
        let mut out = vec![0.0; m * n];
        matmul_nn(va.data(), vb.data(), m, k, n, &mut out);
        let value = Tensor::matrix(m, n, out)?;
        let requires_grad = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul { a, b }, value, requires_grad))
    }

    pub fn transpose(&mut self, src: NodeId) -> NodeId {
        let v = self.value(src);
        let (m, n) = (v.rows(), v.cols());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v.data()[i * n + j];
            }
        }
        let value = Tensor::matrix(n, m, out).expect("same length");
        let requires_grad = self.rg(src);
        self.push(Op::Transpose { src }, value, requires_grad)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Numerics(format!(
                "add: shape mismatch {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let requires_grad = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add { a, b }, value, requires_grad))
    }

    pub fn add_row(&mut self, mat: NodeId, row: NodeId) -> Result<NodeId> {
        let (vm, vr) = (self.value(mat), self.value(row));
        let (m, n) = (vm.rows(), vm.cols());
        if vr.len() != n {
            return Err(Error::Numerics(format!(
                "add_row: {m}x{n} matrix with length-{} row",
                vr.len()
            )));
        }
        let mut out = vm.data().to_vec();
        for r in 0..m {
            for (o, &b) in out[r * n..(r + 1) * n].iter_mut().zip(vr.data()) {
                *o += b;
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        let requires_grad = self.rg(mat) || self.rg(row);
        Ok(self.push(Op::AddRow { mat, row }, value, requires_grad))
    }

    pub fn scale(&mut self, src: NodeId, factor: f64) -> NodeId {
        let v = self.value(src);
        let data = v.data().iter().map(|&x| x * factor).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let requires_grad = self.rg(src);
        self.push(Op::Scale { src, factor }, value, requires_grad)
    }

    /// Adds a constant bias tensor (same length), e.g. -1e9 on padded
    /// attention positions.
    pub fn mask_add(&mut self, src: NodeId, bias: &[f64]) -> Result<NodeId> {
        let v = self.value(src);
        if v.len() != bias.len() {
            return Err(Error::Numerics(format!(
                "mask_add: length mismatch {} vs {}",
                v.len(),
                bias.len()
            )));
        }
        let data = v.data().iter().zip(bias).map(|(&x, &b)| x + b).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        let requires_grad = self.rg(src);
        Ok(self.push(Op::MaskAdd { src }, value, requires_grad))
    }

    pub fn gelu(&mut self, src: NodeId) -> NodeId {
        let v = self.value(src);
        let data = v.data().iter().map(|&x| gelu_scalar(x)).collect();
        let value = Tensor::new(v.shape().to_vec(), data).expect("same shape");
        let requires_grad = self.rg(src);
        self.push(Op::Gelu { src }, value, requires_grad)
    }

    pub fn layer_norm(&mut self, src: NodeId, gain: NodeId, bias: NodeId) -> Result<NodeId> {
        let (vs, vg, vb) = (self.value(src), self.value(gain), self.value(bias));
        let (m, n) = (vs.rows(), vs.cols());
        if vg.len() != n || vb.len() != n {
            return Err(Error::Numerics(format!(
                "layer_norm: gain/bias must have length {n}"
            )));
        }
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            let x = vs.row(r);
            let mean = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for j in 0..n {
                out[r * n + j] = (x[j] - mean) * inv_std * vg.data()[j] + vb.data()[j];
            }
        }
        let value = Tensor::matrix(m, n, out)?;
        let requires_grad = self.rg(src) || self.rg(gain) || self.rg(bias);
        Ok(self.push(Op::LayerNorm { src, gain, bias }, value, requires_grad))
    }

    pub fn softmax_rows(&mut self, src: NodeId) -> Result<NodeId> {
        let v = self.value(src);
        if v.data().iter().any(|x| x.is_nan()) {
            return Err(Error::Numerics("softmax: NaN input".into()));
        }
        let (m, n) = (v.rows(), v.cols());
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            softmax_row(v.row(r), &mut out[r * n..(r + 1) * n]);
        }
        let value = Tensor::matrix(m, n, out)?;
        let requires_grad = self.rg(src);
        Ok(self.push(Op::SoftmaxRows { src }, value, requires_grad))
    }

    pub fn slice_rows(&mut self, src: NodeId, start: usize, rows: usize) -> Result<NodeId> {
        let v = self.value(src);
        let (m, n) = (v.rows(), v.cols());
        if start + rows > m {
            return Err(Error::Numerics(format!(
                "slice_rows: {start}..{} out of range for {m} rows",
                start + rows
            )));
        }
        let out = v.data()[start * n..(start + rows) * n].to_vec();
        let value = Tensor::matrix(rows, n, out)?;
        let requires_grad = self.rg(src);
        Ok(self.push(Op::SliceRows { src, start }, value, requires_grad))
    }

    pub fn slice_cols(&mut self, src: NodeId, start: usize, cols: usize) -> Result<NodeId> {
        let v = self.value(src);
        let (m, n) = (v.rows(), v.cols());
        if start + cols > n {
            return Err(Error::Numerics(format!(
                "slice_cols: {start}..{} out of range for {n} cols",
                start + cols
            )));
        }
        let mut out = Vec::with_capacity(m * cols);
        for r in 0..m {
            out.extend_from_slice(&v.row(r)[start..start + cols]);
        }
        let value = Tensor::matrix(m, cols, out)?;
        let requires_grad = self.rg(src);
        Ok(self.push(Op::SliceCols { src, start }, value, requires_grad))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Numerics("concat_rows: no parts".into()));
        }
        let n = self.value(parts[0]).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != n {
                return Err(Error::Numerics("concat_rows: column mismatch".into()));
            }
            rows += v.rows();
            out.extend_from_slice(v.data());
        }
        let value = Tensor::matrix(rows, n, out)?;
        let requires_grad = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::ConcatRows { parts: parts.to_vec() }, value, requires_grad))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Numerics("concat_cols: no parts".into()));
        }
        let m = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        for &p in parts {
            if self.value(p).rows() != m {
                return Err(Error::Numerics("concat_cols: row mismatch".into()));
            }
        }
        let mut out = Vec::with_capacity(m * total);
        for r in 0..m {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let value = Tensor::matrix(m, total, out)?;
        let requires_grad = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Op::ConcatCols { parts: parts.to_vec() }, value, requires_grad))
    }

    /// Inverted-scaling dropout: kept entries are multiplied by 1/keep so
    /// eval mode is the identity. `drop_prob = 0` records nothing.
    pub fn dropout(&mut self, src: NodeId, drop_prob: f64, rng: &mut Rng) -> NodeId {
        if drop_prob == 0.0 {
            return src;
        }
        let keep = 1.0 - drop_prob;
        let mask: Vec<f64> = (0..self.value(src).len())
            .map(|_| if rng.next_f64() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.dropout_with_mask(src, mask).expect("mask has matching length")
    }

    /// Dropout with an explicit mask (entries 0 or 1/keep).
    pub fn dropout_with_mask(&mut self, src: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let v = self.value(src);
        if mask.len() != v.len() {
            return Err(Error::Numerics("dropout: mask length mismatch".into()));
        }
        let data = v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let value = Tensor::new(v.shape().to_vec(), data)?;
        let requires_grad = self.rg(src);
        Ok(self.push(Op::Dropout { src, mask }, value, requires_grad))
    }

    /// Mean cross-entropy over the rows whose target is `Some`. Rows
    /// without a target contribute neither loss nor gradient; with no
    /// labeled rows at all the result is the constant 0.
    pub fn cross_entropy_mean(
        &mut self,
        logits: NodeId,
        targets: &[Option<u32>],
    ) -> Result<NodeId> {
        let v = self.value(logits);
        let (m, n) = (v.rows(), v.cols());
        if targets.len() != m {
            return Err(Error::Numerics(format!(
                "cross_entropy: {} targets for {m} rows",
                targets.len()
            )));
        }
        if let Some(&bad) = targets.iter().flatten().find(|&&t| t as usize >= n) {
            return Err(Error::Numerics(format!(
                "cross_entropy: target class {bad} out of range for {n} classes"
            )));
        }
        let mut total = 0.0;
        let mut n_labeled = 0usize;
        for (r, t) in targets.iter().enumerate() {
            if let Some(t) = t {
                let row = v.row(r);
                total += log_sum_exp(row) - row[*t as usize];
                n_labeled += 1;
            }
        }
        let mean = if n_labeled > 0 { total / n_labeled as f64 } else { 0.0 };
        let requires_grad = self.rg(logits) && n_labeled > 0;
        Ok(self.push(
            Op::CrossEntropyMean { logits, targets: targets.to_vec(), n_labeled },
            Tensor::scalar(mean),
            requires_grad,
        ))
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, parts: &[(NodeId, f64)]) -> Result<NodeId> {
        let mut total = 0.0;
        for &(p, w) in parts {
            let v = self.value(p);
            if v.len() != 1 {
                return Err(Error::Numerics("weighted_sum: non-scalar part".into()));
            }
            total += w * v.item();
        }
        let requires_grad = parts.iter().any(|&(p, _)| self.rg(p));
        Ok(self.push(Op::WeightedSum { parts: parts.to_vec() }, Tensor::scalar(total), requires_grad))
    }

    /// Reverse sweep from a scalar node. Gradients of earlier backward
    /// calls on the same tape are discarded.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Numerics("backward: target node is not a scalar".into()));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = self.grads[id].take() else { continue };
            self.propagate(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, id: usize, g: &[f64]) {
        // `nodes` is only read below while `grads` is mutated, so split
        // the borrows once up front.
        let Tape { nodes, grads, .. } = self;
        let needs = |nid: NodeId| nodes[nid.0].requires_grad;

        fn grad_buf<'a>(
            grads: &'a mut [Option<Vec<f64>>],
            nid: NodeId,
            len: usize,
        ) -> &'a mut [f64] {
            grads[nid.0].get_or_insert_with(|| vec![0.0; len])
        }
        macro_rules! parent_grad {
            ($nid:expr) => {
                grad_buf(grads, $nid, nodes[$nid.0].value.len())
            };
        }

        match &nodes[id].op {
            Op::Leaf => {}
            Op::GatherRows { src, rows } => {
                if needs(*src) {
                    let d = nodes[src.0].value.cols();
                    let gs = parent_grad!(*src);
                    for (r, &row) in rows.iter().enumerate() {
                        let dst = &mut gs[row as usize * d..(row as usize + 1) * d];
                        for (o, &v) in dst.iter_mut().zip(&g[r * d..(r + 1) * d]) {
                            *o += v;
                        }
                    }
                }
            }
            Op::MatMul { a, b } => {
                let (m, k) = (nodes[a.0].value.rows(), nodes[a.0].value.cols());
                let n = nodes[b.0].value.cols();
                if needs(*a) {
                    // dA = dC . B^T
                    let ga = parent_grad!(*a);
                    matmul_nt(g, nodes[b.0].value.data(), m, n, k, ga);
                }
                if needs(*b) {
                    // dB = A^T . dC
                    let gb = parent_grad!(*b);
                    matmul_tn(nodes[a.0].value.data(), g, k, m, n, gb);
                }
            }
            Op::Transpose { src } => {
                if needs(*src) {
                    let (m, n) = (nodes[src.0].value.rows(), nodes[src.0].value.cols());
                    let gs = parent_grad!(*src);
                    // g has shape [n x m]
                    for i in 0..n {
                        for j in 0..m {
                            gs[j * n + i] += g[i * m + j];
                        }
                    }
                }
            }
            Op::Add { a, b } => {
                for nid in [*a, *b] {
                    if needs(nid) {
                        let gp = parent_grad!(nid);
                        for (o, &v) in gp.iter_mut().zip(g) {
                            *o += v;
                        }
                    }
                }
            }
            Op::AddRow { mat, row } => {
                if needs(*mat) {
                    let gm = parent_grad!(*mat);
                    for (o, &v) in gm.iter_mut().zip(g) {
                        *o += v;
                    }
                }
                if needs(*row) {
                    let n = nodes[row.0].value.len();
                    let gr = parent_grad!(*row);
                    for chunk in g.chunks_exact(n) {
                        for (o, &v) in gr.iter_mut().zip(chunk) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Scale { src, factor } => {
                if needs(*src) {
                    let f = *factor;
                    let gs = parent_grad!(*src);
                    for (o, &v) in gs.iter_mut().zip(g) {
                        *o += f * v;
                    }
                }
            }
            Op::MaskAdd { src } => {
                if needs(*src) {
                    let gs = parent_grad!(*src);
                    for (o, &v) in gs.iter_mut().zip(g) {
                        *o += v;
                    }
                }
            }
            Op::Gelu { src } => {
                if needs(*src) {
                    let x = nodes[src.0].value.data();
                    let gs = parent_grad!(*src);
                    for ((o, &xv), &gv) in gs.iter_mut().zip(x).zip(g) {
                        *o += gelu_grad_scalar(xv) * gv;
                    }
                }
            }
            Op::LayerNorm { src, gain, bias } => {
                let (m, n) = (nodes[src.0].value.rows(), nodes[src.0].value.cols());
                let x = nodes[src.0].value.data();
                let gainv = nodes[gain.0].value.data();
                // Per-row statistics are recomputed; cheaper than caching
                // at the sizes involved here.
                for r in 0..m {
                    let xr = &x[r * n..(r + 1) * n];
                    let gr = &g[r * n..(r + 1) * n];
                    let mean = xr.iter().sum::<f64>() / n as f64;
                    let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    if needs(*gain) {
                        let gg = parent_grad!(*gain);
                        for j in 0..n {
                            gg[j] += gr[j] * (xr[j] - mean) * inv_std;
                        }
                    }
                    if needs(*bias) {
                        let gb = parent_grad!(*bias);
                        for j in 0..n {
                            gb[j] += gr[j];
                        }
                    }
                    if needs(*src) {
                        let mut mean_dxhat = 0.0;
                        let mut mean_dxhat_xhat = 0.0;
                        for j in 0..n {
                            let xhat = (xr[j] - mean) * inv_std;
                            let dxhat = gr[j] * gainv[j];
                            mean_dxhat += dxhat;
                            mean_dxhat_xhat += dxhat * xhat;
                        }
                        mean_dxhat /= n as f64;
                        mean_dxhat_xhat /= n as f64;
                        let gs = parent_grad!(*src);
                        for j in 0..n {
                            let xhat = (xr[j] - mean) * inv_std;
                            let dxhat = gr[j] * gainv[j];
                            gs[r * n + j] +=
                                inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                        }
                    }
                }
            }
            Op::SoftmaxRows { src } => {
                if needs(*src) {
                    let (m, n) = (nodes[id].value.rows(), nodes[id].value.cols());
                    let y = nodes[id].value.data();
                    let gs = parent_grad!(*src);
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for j in 0..n {
                            gs[r * n + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::SliceRows { src, start } => {
                if needs(*src) {
                    let n = nodes[src.0].value.cols();
                    let offset = start * n;
                    let gs = parent_grad!(*src);
                    for (o, &v) in gs[offset..offset + g.len()].iter_mut().zip(g) {
                        *o += v;
                    }
                }
            }
            Op::SliceCols { src, start } => {
                if needs(*src) {
                    let (m, n) = (nodes[src.0].value.rows(), nodes[src.0].value.cols());
                    let c = g.len() / m;
                    let s = *start;
                    let gs = parent_grad!(*src);
                    for r in 0..m {
                        for j in 0..c {
                            gs[r * n + s + j] += g[r * c + j];
                        }
                    }
                }
            }
            Op::ConcatRows { parts } => {
                let mut offset = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if needs(p) {
                        let gp = parent_grad!(p);
                        for (o, &v) in gp.iter_mut().zip(&g[offset..offset + len]) {
                            *o += v;
                        }
                    }
                    offset += len;
                }
            }
            Op::ConcatCols { parts } => {
                let m = nodes[id].value.rows();
                let total = nodes[id].value.cols();
                let mut col = 0;
                for &p in parts {
                    let c = nodes[p.0].value.cols();
                    if needs(p) {
                        let gp = parent_grad!(p);
                        for r in 0..m {
                            for j in 0..c {
                                gp[r * c + j] += g[r * total + col + j];
                            }
                        }
                    }
                    col += c;
                }
            }
            Op::Dropout { src, mask } => {
                if needs(*src) {
                    let gs = parent_grad!(*src);
                    for ((o, &mv), &gv) in gs.iter_mut().zip(mask).zip(g) {
                        *o += mv * gv;
                    }
                }
            }
            Op::CrossEntropyMean { logits, targets, n_labeled } => {
                if needs(*logits) && *n_labeled > 0 {
                    let n = nodes[logits.0].value.cols();
                    let x = nodes[logits.0].value.data();
                    let scale = g[0] / *n_labeled as f64;
                    let gl = parent_grad!(*logits);
                    let mut probs = vec![0.0; n];
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = t else { continue };
                        softmax_row(&x[r * n..(r + 1) * n], &mut probs);
                        for j in 0..n {
                            let onehot = if j == *t as usize { 1.0 } else { 0.0 };
                            gl[r * n + j] += (probs[j] - onehot) * scale;
                        }
                    }
                }
            }
            Op::WeightedSum { parts } => {
                for &(p, w) in parts {
                    if needs(p) {
                        let gp = parent_grad!(p);
                        gp[0] += w * g[0];
                    }
                }
            }
        }
    }

    /// Add every bound leaf's gradient into its store entry.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for (id, name) in &self.bindings {
            if let Some(g) = self.grad(*id) {
                store.add_grad(name, g)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, shape: Vec<usize>, data: Vec<f64>) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert(name, Tensor::new(shape, data).unwrap()).unwrap();
        s
    }

    #[test]
    fn square_via_matmul_accumulates_both_parents() {
        // f(w) = w * w for scalar w: grad = 2w
        let mut store = store_with("w", vec![1, 1], vec![3.0]);
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let y = tape.matmul(w, w).unwrap();
        assert_eq!(tape.value(y).item(), 9.0);
        tape.backward(y).unwrap();
        tape.accumulate_into(&mut store).unwrap();
        assert_eq!(store.get("w").unwrap().grad(), &[6.0]);
    }

    #[test]
    fn cross_entropy_gradient_at_uniform_logits() {
        let mut store = store_with("logits", vec![1, 2], vec![0.0, 0.0]);
        let mut tape = Tape::new();
        let l = tape.param(&store, "logits").unwrap();
        let loss = tape.cross_entropy_mean(l, &[Some(0)]).unwrap();
        assert!((tape.value(loss).item() - std::f64::consts::LN_2).abs() < 1e-12);
        tape.backward(loss).unwrap();
        tape.accumulate_into(&mut store).unwrap();
        let g = store.get("logits").unwrap().grad();
        assert!((g[0] - (-0.5)).abs() < 1e-12);
        assert!((g[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_with_no_labels_is_constant_zero() {
        let store = store_with("logits", vec![2, 3], vec![1.0; 6]);
        let mut tape = Tape::new();
        let l = tape.param(&store, "logits").unwrap();
        let loss = tape.cross_entropy_mean(l, &[None, None]).unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
        tape.backward(loss).unwrap();
        assert!(tape.grad(l).is_none());
    }

    #[test]
    fn masked_rows_get_zero_gradient() {
        let mut store = store_with("logits", vec![2, 2], vec![0.3, -0.1, 0.5, 0.2]);
        let mut tape = Tape::new();
        let l = tape.param(&store, "logits").unwrap();
        let loss = tape.cross_entropy_mean(l, &[None, Some(1)]).unwrap();
        tape.backward(loss).unwrap();
        tape.accumulate_into(&mut store).unwrap();
        let g = store.get("logits").unwrap().grad();
        assert_eq!(&g[0..2], &[0.0, 0.0]);
        assert!(g[2] != 0.0 && g[3] != 0.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let store = store_with("w", vec![1, 2], vec![1.0, 2.0]);
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let c = tape.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let y = tape.matmul(w, c).unwrap();
        tape.backward(y).unwrap();
        assert!(tape.grad(c).is_none());
        assert!(tape.grad(w).is_some());
    }

    #[test]
    fn dropout_zero_prob_is_identity() {
        let store = store_with("w", vec![1, 3], vec![1.0, 2.0, 3.0]);
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let mut rng = Rng::new(0);
        let d = tape.dropout(w, 0.0, &mut rng);
        assert_eq!(d, w);
    }

    #[test]
    fn dropout_mask_scales_gradient() {
        let mut store = store_with("w", vec![1, 2], vec![1.0, 1.0]);
        let mut tape = Tape::new();
        let w = tape.param(&store, "w").unwrap();
        let d = tape.dropout_with_mask(w, vec![2.0, 0.0]).unwrap();
        let ones = tape.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
        let y = tape.matmul(d, ones).unwrap();
        tape.backward(y).unwrap();
        tape.accumulate_into(&mut store).unwrap();
        assert_eq!(store.get("w").unwrap().grad(), &[2.0, 0.0]);
    }

    #[test]
    fn shape_errors_are_reported() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        let b = tape.constant(Tensor::matrix(2, 3, vec![0.0; 6]).unwrap());
        assert!(tape.matmul(a, b).is_err());
        assert!(tape.slice_rows(a, 1, 2).is_err());
        assert!(tape.gather_rows(a, &[2]).is_err());
    }
}
