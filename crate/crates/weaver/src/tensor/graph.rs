//! Reverse-mode differentiation tape.
//!
//! Every operation appends a node holding its output value and the metadata
//! its backward rule needs. `backward` walks the tape once in reverse
//! creation order (creation order is already topological), so each node's
//! rule runs exactly once per call. Leaf gradients accumulate (+=) across
//! repeated backward calls until `zero_grads`.
//!
//! Shape violations panic with messages naming both shapes. With
//! `checked()` construction the graph additionally verifies every forward
//! output is finite and that `log` only sees positive inputs; training
//! graphs leave this off for speed.

use super::{shape_product, Real, Tensor};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Pairwise question/context feature combination used to build the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CombineMode {
    /// [q; q - c; q.c; extra]
    QDiffDot,
    /// [q; c; extra]
    QC,
    /// [q; c; q.c; extra]
    QCDot,
}

impl CombineMode {
    pub fn width(&self, embed: usize, extra: usize) -> usize {
        match self {
            CombineMode::QDiffDot | CombineMode::QCDot => 2 * embed + 1 + extra,
            CombineMode::QC => 2 * embed + extra,
        }
    }
}

enum Op<F> {
    Leaf,
    Matmul { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddVec { a: Var, v: Var },
    Scale { x: Var, c: F },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Exp { x: Var },
    Log { x: Var },
    ConcatLast { parts: Vec<Var> },
    SliceLast { x: Var, start: usize },
    Row { x: Var, index: usize },
    StackRows { parts: Vec<Var> },
    Transpose01 { x: Var },
    Reshape { x: Var },
    ReduceMax { x: Var, axis: usize, argmax: Vec<usize> },
    ReduceMean { x: Var, axis: usize, mask: Option<Vec<bool>> },
    SumAll { x: Var },
    MaskedSoftmax { z: Var, mask: Vec<bool> },
    MaskedLogSoftmax { z: Var, mask: Vec<bool>, probs: Vec<F> },
    GatherRows { table: Var, ids: Vec<usize> },
    CombineGrid { q: Var, c: Var, extras: Var, mode: CombineMode, q_len: usize, c_len: usize },
    MaskGrid { x: Var, q_len: usize, c_len: usize },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires: bool,
    grad: Option<Vec<F>>,
}

pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    checks: bool,
    backward_applications: usize,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            checks: false,
            backward_applications: 0,
        }
    }

    /// Graph that validates forward outputs (finite values, log domains).
    /// Used for verification runs; training graphs skip the scans.
    pub fn checked() -> Self {
        Graph {
            nodes: Vec::new(),
            checks: true,
            backward_applications: 0,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Backward-rule applications performed by the most recent `backward`.
    pub fn backward_applications(&self) -> usize {
        self.backward_applications
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<Tensor<F>> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape().to_vec(), g.clone()))
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires: bool) -> Var {
        if self.checks {
            assert!(
                value.is_finite(),
                "non-finite value produced at node {} ({})",
                self.nodes.len(),
                op_name(&op)
            );
        }
        self.nodes.push(Node {
            value,
            op,
            requires,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires
    }

    // ── forward ops ────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        assert!(
            sa.len() == 2 && sb.len() == 2 && sa[1] == sb[0],
            "matmul: incompatible shapes {sa:?} and {sb:?}"
        );
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![F::zero(); m * n];
        matmul_acc(
            self.value(a).data(),
            self.value(b).data(),
            m,
            k,
            n,
            &mut out,
        );
        let req = self.requires(a) || self.requires(b);
        self.push(Tensor::new(vec![m, n], out), Op::Matmul { a, b }, req)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, "add", |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, "sub", |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, "mul", |x, y| x * y, Op::Mul { a, b })
    }

    fn zip_op(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        f: impl Fn(F, F) -> F,
        op: Op<F>,
    ) -> Var {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        assert_eq!(sa, sb, "{name}: shape mismatch {sa:?} vs {sb:?}");
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let req = self.requires(a) || self.requires(b);
        let shape = sa.to_vec();
        self.push(Tensor::new(shape, data), op, req)
    }

    /// Broadcast add of a vector along the last axis (bias add).
    pub fn add_vec(&mut self, a: Var, v: Var) -> Var {
        let (sa, sv) = (self.value(a).shape(), self.value(v).shape());
        assert!(
            sv.len() == 1 && !sa.is_empty() && sa[sa.len() - 1] == sv[0],
            "add_vec: cannot broadcast {sv:?} over last axis of {sa:?}"
        );
        let width = sv[0];
        let mut data = self.value(a).data().to_vec();
        let vdata = self.value(v).data();
        for chunk in data.chunks_exact_mut(width) {
            for (x, &y) in chunk.iter_mut().zip(vdata) {
                *x += y;
            }
        }
        let req = self.requires(a) || self.requires(v);
        let shape = sa.to_vec();
        self.push(Tensor::new(shape, data), Op::AddVec { a, v }, req)
    }

    pub fn scale(&mut self, x: Var, c: F) -> Var {
        let data = self.value(x).data().iter().map(|&v| v * c).collect();
        let shape = self.value(x).shape().to_vec();
        let req = self.requires(x);
        self.push(Tensor::new(shape, data), Op::Scale { x, c }, req)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let one = F::one();
        self.unary_op(x, |v| one / (one + (-v).exp()), |x| Op::Sigmoid { x })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary_op(x, |v| v.tanh(), |x| Op::Tanh { x })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary_op(x, |v| v.exp(), |x| Op::Exp { x })
    }

    pub fn log(&mut self, x: Var) -> Var {
        if self.checks {
            assert!(
                self.value(x).data().iter().all(|v| *v > F::zero()),
                "log: non-positive input"
            );
        }
        self.unary_op(x, |v| v.ln(), |x| Op::Log { x })
    }

    fn unary_op(&mut self, x: Var, f: impl Fn(F) -> F, op: impl Fn(Var) -> Op<F>) -> Var {
        let data = self.value(x).data().iter().map(|&v| f(v)).collect();
        let shape = self.value(x).shape().to_vec();
        let req = self.requires(x);
        self.push(Tensor::new(shape, data), op(x), req)
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_last: no operands");
        let first = self.value(parts[0]).shape().to_vec();
        assert!(!first.is_empty(), "concat_last: scalar operand");
        let lead = &first[..first.len() - 1];
        let mut total_last = 0;
        for &p in parts {
            let s = self.value(p).shape();
            assert_eq!(
                &s[..s.len() - 1],
                lead,
                "concat_last: leading extents disagree: {s:?} vs {first:?}"
            );
            total_last += s[s.len() - 1];
        }
        let rows = shape_product(lead);
        let mut data = Vec::with_capacity(rows * total_last);
        for r in 0..rows {
            for &p in parts {
                let t = self.value(p);
                let w = t.shape()[t.rank() - 1];
                data.extend_from_slice(&t.data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total_last);
        let req = parts.iter().any(|&p| self.requires(p));
        self.push(
            Tensor::new(shape, data),
            Op::ConcatLast {
                parts: parts.to_vec(),
            },
            req,
        )
    }

    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Var {
        let s = self.value(x).shape().to_vec();
        assert!(!s.is_empty(), "slice_last: scalar operand");
        let full = s[s.len() - 1];
        assert!(
            start + len <= full,
            "slice_last: range {start}..{} out of bounds for last extent {full}",
            start + len
        );
        let rows = shape_product(&s[..s.len() - 1]);
        let mut data = Vec::with_capacity(rows * len);
        let xd = self.value(x).data();
        for r in 0..rows {
            data.extend_from_slice(&xd[r * full + start..r * full + start + len]);
        }
        let mut shape = s[..s.len() - 1].to_vec();
        shape.push(len);
        let req = self.requires(x);
        self.push(Tensor::new(shape, data), Op::SliceLast { x, start }, req)
    }

    /// Slice along axis 0, dropping the axis ([d0, rest..] -> [rest..]).
    pub fn row(&mut self, x: Var, index: usize) -> Var {
        let s = self.value(x).shape().to_vec();
        assert!(
            !s.is_empty() && index < s[0],
            "row: index {index} out of bounds for shape {s:?}"
        );
        let block = shape_product(&s[1..]);
        let data = self.value(x).data()[index * block..(index + 1) * block].to_vec();
        let req = self.requires(x);
        self.push(Tensor::new(s[1..].to_vec(), data), Op::Row { x, index }, req)
    }

    /// Stack equal-shape operands along a new leading axis.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "stack_rows: no operands");
        let inner = self.value(parts[0]).shape().to_vec();
        let mut data = Vec::with_capacity(parts.len() * shape_product(&inner));
        for &p in parts {
            let s = self.value(p).shape();
            assert_eq!(s, &inner[..], "stack_rows: shape mismatch {s:?} vs {inner:?}");
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&inner);
        let req = parts.iter().any(|&p| self.requires(p));
        self.push(
            Tensor::new(shape, data),
            Op::StackRows {
                parts: parts.to_vec(),
            },
            req,
        )
    }

    /// Swap the first two axes of a rank-2 or rank-3 tensor.
    pub fn transpose01(&mut self, x: Var) -> Var {
        let s = self.value(x).shape().to_vec();
        assert!(
            s.len() == 2 || s.len() == 3,
            "transpose01: rank {} not supported (shape {s:?})",
            s.len()
        );
        let inner = if s.len() == 3 { s[2] } else { 1 };
        let data = transpose01_data(self.value(x).data(), s[0], s[1], inner);
        let mut shape = s.clone();
        shape.swap(0, 1);
        let req = self.requires(x);
        self.push(Tensor::new(shape, data), Op::Transpose01 { x }, req)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let old = self.value(x).shape();
        assert_eq!(
            shape_product(shape),
            self.value(x).numel(),
            "reshape: {old:?} to {shape:?} changes element count"
        );
        let data = self.value(x).data().to_vec();
        let req = self.requires(x);
        self.push(Tensor::new(shape.to_vec(), data), Op::Reshape { x }, req)
    }

    /// Max over one axis; masked entries (mask[k] == false along the axis)
    /// never win. Gradient flows to the first maximal position only.
    pub fn reduce_max_axis(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Var {
        let (outer, red, inner, out_shape) = self.reduce_geometry(x, axis, mask, "reduce_max_axis");
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        let mut argmax = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for i in 0..inner {
                let mut best: Option<(F, usize)> = None;
                for r in 0..red {
                    if mask.map_or(false, |m| !m[r]) {
                        continue;
                    }
                    let v = xd[(o * red + r) * inner + i];
                    // strict > keeps the first index on ties
                    if best.map_or(true, |(bv, _)| v > bv) {
                        best = Some((v, r));
                    }
                }
                let (v, r) = best.expect("reduce_max_axis: all positions masked");
                out.push(v);
                argmax.push(r);
            }
        }
        let req = self.requires(x);
        self.push(
            Tensor::new(out_shape, out),
            Op::ReduceMax { x, axis, argmax },
            req,
        )
    }

    /// Mean over one axis, counting only unmasked entries.
    pub fn reduce_mean_axis(&mut self, x: Var, axis: usize, mask: Option<&[bool]>) -> Var {
        let (outer, red, inner, out_shape) = self.reduce_geometry(x, axis, mask, "reduce_mean_axis");
        let count = mask.map_or(red, |m| m.iter().filter(|&&b| b).count());
        assert!(count > 0, "reduce_mean_axis: all positions masked");
        let denom = F::from_f64(count as f64);
        let xd = self.value(x).data();
        let mut out = vec![F::zero(); outer * inner];
        for o in 0..outer {
            for r in 0..red {
                if mask.map_or(false, |m| !m[r]) {
                    continue;
                }
                let base = (o * red + r) * inner;
                for i in 0..inner {
                    out[o * inner + i] += xd[base + i];
                }
            }
        }
        for v in &mut out {
            *v /= denom;
        }
        let req = self.requires(x);
        self.push(
            Tensor::new(out_shape, out),
            Op::ReduceMean {
                x,
                axis,
                mask: mask.map(|m| m.to_vec()),
            },
            req,
        )
    }

    fn reduce_geometry(
        &self,
        x: Var,
        axis: usize,
        mask: Option<&[bool]>,
        name: &str,
    ) -> (usize, usize, usize, Vec<usize>) {
        let s = self.value(x).shape();
        assert!(
            axis < s.len(),
            "{name}: axis {axis} out of bounds for shape {s:?}"
        );
        if let Some(m) = mask {
            assert_eq!(
                m.len(),
                s[axis],
                "{name}: mask length {} does not match axis extent {}",
                m.len(),
                s[axis]
            );
        }
        let outer = shape_product(&s[..axis]);
        let red = s[axis];
        let inner = shape_product(&s[axis + 1..]);
        let mut out_shape = s.to_vec();
        out_shape.remove(axis);
        (outer, red, inner, out_shape)
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let mut acc = F::zero();
        for &v in self.value(x).data() {
            acc += v;
        }
        let req = self.requires(x);
        self.push(Tensor::scalar(acc), Op::SumAll { x }, req)
    }

    /// Softmax over the unmasked entries of a vector; masked entries are
    /// exactly zero. Panics if every entry is masked.
    pub fn masked_softmax(&mut self, z: Var, mask: &[bool]) -> Var {
        let probs = self.softmax_data(z, mask, "masked_softmax");
        let n = probs.len();
        let req = self.requires(z);
        self.push(
            Tensor::new(vec![n], probs),
            Op::MaskedSoftmax {
                z,
                mask: mask.to_vec(),
            },
            req,
        )
    }

    /// Log-softmax over unmasked entries (stable form z - logsumexp).
    /// Masked outputs are 0 and must not be consumed.
    pub fn masked_log_softmax(&mut self, z: Var, mask: &[bool]) -> Var {
        let probs = self.softmax_data(z, mask, "masked_log_softmax");
        let zd = self.value(z).data();
        let n = zd.len();
        // recover lse from any unmasked position: logp = z - lse
        let anchor = mask.iter().position(|&b| b).unwrap();
        let lse = zd[anchor] - probs[anchor].ln();
        let data: Vec<F> = (0..n)
            .map(|i| if mask[i] { zd[i] - lse } else { F::zero() })
            .collect();
        let req = self.requires(z);
        self.push(
            Tensor::new(vec![n], data),
            Op::MaskedLogSoftmax {
                z,
                mask: mask.to_vec(),
                probs,
            },
            req,
        )
    }

    fn softmax_data(&self, z: Var, mask: &[bool], name: &str) -> Vec<F> {
        let zd = self.value(z).data();
        assert_eq!(
            self.value(z).rank(),
            1,
            "{name}: expected a vector, got shape {:?}",
            self.value(z).shape()
        );
        assert_eq!(
            mask.len(),
            zd.len(),
            "{name}: mask length {} vs vector length {}",
            mask.len(),
            zd.len()
        );
        assert!(
            mask.iter().any(|&b| b),
            "{name}: all positions masked"
        );
        let mut max = F::neg_infinity();
        for (i, &v) in zd.iter().enumerate() {
            if mask[i] && v > max {
                max = v;
            }
        }
        let mut sum = F::zero();
        let mut out = vec![F::zero(); zd.len()];
        for (i, &v) in zd.iter().enumerate() {
            if mask[i] {
                let e = (v - max).exp();
                out[i] = e;
                sum += e;
            }
        }
        for v in &mut out {
            *v /= sum;
        }
        out
    }

    /// Embedding lookup: rows of `table` selected by token ids.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let s = self.value(table).shape();
        assert_eq!(s.len(), 2, "gather_rows: table must be 2D, got {s:?}");
        let (v, e) = (s[0], s[1]);
        let td = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * e);
        for &id in ids {
            assert!(id < v, "gather_rows: id {id} out of bounds for table {s:?}");
            data.extend_from_slice(&td[id * e..(id + 1) * e]);
        }
        let req = self.requires(table);
        self.push(
            Tensor::new(vec![ids.len(), e], data),
            Op::GatherRows {
                table,
                ids: ids.to_vec(),
            },
            req,
        )
    }

    /// Build the question/context grid: cell (i, j) combines question
    /// embedding i with context embedding j and the per-token extra
    /// features of j. Cells at i >= q_len or j >= c_len are zero.
    pub fn combine_grid(
        &mut self,
        q: Var,
        c: Var,
        extras: Var,
        mode: CombineMode,
        q_len: usize,
        c_len: usize,
    ) -> Var {
        let (sq, sc, sx) = (
            self.value(q).shape().to_vec(),
            self.value(c).shape().to_vec(),
            self.value(extras).shape().to_vec(),
        );
        assert!(
            sq.len() == 2 && sc.len() == 2 && sq[1] == sc[1],
            "combine_grid: embedding shapes disagree: {sq:?} vs {sc:?}"
        );
        assert!(
            sx.len() == 2 && sx[0] == sc[0],
            "combine_grid: extras shape {sx:?} does not cover context {sc:?}"
        );
        let (m, e) = (sq[0], sq[1]);
        let n = sc[0];
        let xw = sx[1];
        assert!(q_len <= m && c_len <= n, "combine_grid: mask lengths exceed extents");
        let d = mode.width(e, xw);
        let (qd, cd, xd) = (
            self.value(q).data(),
            self.value(c).data(),
            self.value(extras).data(),
        );
        let mut data = vec![F::zero(); m * n * d];
        for i in 0..q_len {
            let qi = &qd[i * e..(i + 1) * e];
            for j in 0..c_len {
                let cj = &cd[j * e..(j + 1) * e];
                let xj = &xd[j * xw..(j + 1) * xw];
                let cell = &mut data[(i * n + j) * d..(i * n + j + 1) * d];
                match mode {
                    CombineMode::QDiffDot => {
                        cell[..e].copy_from_slice(qi);
                        let mut dot = F::zero();
                        for k in 0..e {
                            cell[e + k] = qi[k] - cj[k];
                            dot += qi[k] * cj[k];
                        }
                        cell[2 * e] = dot;
                        cell[2 * e + 1..].copy_from_slice(xj);
                    }
                    CombineMode::QC => {
                        cell[..e].copy_from_slice(qi);
                        cell[e..2 * e].copy_from_slice(cj);
                        cell[2 * e..].copy_from_slice(xj);
                    }
                    CombineMode::QCDot => {
                        cell[..e].copy_from_slice(qi);
                        cell[e..2 * e].copy_from_slice(cj);
                        let mut dot = F::zero();
                        for k in 0..e {
                            dot += qi[k] * cj[k];
                        }
                        cell[2 * e] = dot;
                        cell[2 * e + 1..].copy_from_slice(xj);
                    }
                }
            }
        }
        let req = self.requires(q) || self.requires(c) || self.requires(extras);
        self.push(
            Tensor::new(vec![m, n, d], data),
            Op::CombineGrid {
                q,
                c,
                extras,
                mode,
                q_len,
                c_len,
            },
            req,
        )
    }

    /// Zero out grid cells at padded rows (i >= q_len) or columns
    /// (j >= c_len) of an [m, n, c] tensor.
    pub fn mask_grid(&mut self, x: Var, q_len: usize, c_len: usize) -> Var {
        let s = self.value(x).shape().to_vec();
        assert_eq!(s.len(), 3, "mask_grid: expected rank 3, got {s:?}");
        let (m, n, w) = (s[0], s[1], s[2]);
        assert!(q_len <= m && c_len <= n, "mask_grid: mask lengths exceed extents");
        let mut data = self.value(x).data().to_vec();
        zero_padded_cells(&mut data, m, n, w, q_len, c_len);
        let req = self.requires(x);
        self.push(Tensor::new(s, data), Op::MaskGrid { x, q_len, c_len }, req)
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Populate gradients of every requires-grad node reachable from the
    /// scalar `loss`. Leaf gradients accumulate across calls.
    pub fn backward(&mut self, loss: Var) {
        assert_eq!(
            self.value(loss).numel(),
            1,
            "backward: loss must be scalar, got shape {:?}",
            self.value(loss).shape()
        );
        let n = self.nodes.len();
        let mut scratch: Vec<Option<Vec<F>>> = (0..n).map(|_| None).collect();
        scratch[loss.0] = Some(vec![F::one()]);
        self.backward_applications = 0;
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires {
                continue;
            }
            let g = match scratch[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.backward_applications += 1;
            self.apply_rule(id, &g, &mut scratch);
            scratch[id] = Some(g);
        }
        for (id, slot) in scratch.into_iter().enumerate() {
            if let Some(g) = slot {
                if self.nodes[id].requires {
                    match &mut self.nodes[id].grad {
                        Some(acc) => {
                            for (a, b) in acc.iter_mut().zip(&g) {
                                *a += *b;
                            }
                        }
                        None => self.nodes[id].grad = Some(g),
                    }
                }
            }
        }
    }

    fn apply_rule(&self, id: usize, g: &[F], scratch: &mut [Option<Vec<F>>]) {
        // accumulate into an input's scratch gradient, allocating on demand
        macro_rules! sink {
            ($var:expr) => {{
                let len = self.nodes[$var.0].value.numel();
                scratch[$var.0]
                    .get_or_insert_with(|| vec![F::zero(); len])
                    .as_mut_slice()
            }};
        }
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (m, k) = {
                    let s = self.nodes[a.0].value.shape();
                    (s[0], s[1])
                };
                let n = self.nodes[b.0].value.shape()[1];
                if self.nodes[a.0].requires {
                    let bt = transpose01_data(self.nodes[b.0].value.data(), k, n, 1);
                    matmul_acc(g, &bt, m, n, k, sink!(a));
                }
                if self.nodes[b.0].requires {
                    let at = transpose01_data(self.nodes[a.0].value.data(), m, k, 1);
                    matmul_acc(&at, g, k, m, n, sink!(b));
                }
            }
            Op::Add { a, b } => {
                if self.nodes[a.0].requires {
                    axpy(F::one(), g, sink!(a));
                }
                if self.nodes[b.0].requires {
                    axpy(F::one(), g, sink!(b));
                }
            }
            Op::Sub { a, b } => {
                if self.nodes[a.0].requires {
                    axpy(F::one(), g, sink!(a));
                }
                if self.nodes[b.0].requires {
                    axpy(-F::one(), g, sink!(b));
                }
            }
            Op::Mul { a, b } => {
                if self.nodes[a.0].requires {
                    let bd = self.nodes[b.0].value.data();
                    for ((s, &gv), &bv) in sink!(a).iter_mut().zip(g).zip(bd) {
                        *s += gv * bv;
                    }
                }
                if self.nodes[b.0].requires {
                    let ad = self.nodes[a.0].value.data();
                    for ((s, &gv), &av) in sink!(b).iter_mut().zip(g).zip(ad) {
                        *s += gv * av;
                    }
                }
            }
            Op::AddVec { a, v } => {
                if self.nodes[a.0].requires {
                    axpy(F::one(), g, sink!(a));
                }
                if self.nodes[v.0].requires {
                    let width = self.nodes[v.0].value.numel();
                    let s = sink!(v);
                    for chunk in g.chunks_exact(width) {
                        for (sv, &gv) in s.iter_mut().zip(chunk) {
                            *sv += gv;
                        }
                    }
                }
            }
            Op::Scale { x, c } => {
                if self.nodes[x.0].requires {
                    axpy(*c, g, sink!(x));
                }
            }
            Op::Sigmoid { x } => {
                if self.nodes[x.0].requires {
                    let y = self.nodes[id].value.data();
                    for ((s, &gv), &yv) in sink!(x).iter_mut().zip(g).zip(y) {
                        *s += gv * yv * (F::one() - yv);
                    }
                }
            }
            Op::Tanh { x } => {
                if self.nodes[x.0].requires {
                    let y = self.nodes[id].value.data();
                    for ((s, &gv), &yv) in sink!(x).iter_mut().zip(g).zip(y) {
                        *s += gv * (F::one() - yv * yv);
                    }
                }
            }
            Op::Exp { x } => {
                if self.nodes[x.0].requires {
                    let y = self.nodes[id].value.data();
                    for ((s, &gv), &yv) in sink!(x).iter_mut().zip(g).zip(y) {
                        *s += gv * yv;
                    }
                }
            }
            Op::Log { x } => {
                if self.nodes[x.0].requires {
                    let xd = self.nodes[x.0].value.data();
                    for ((s, &gv), &xv) in sink!(x).iter_mut().zip(g).zip(xd) {
                        *s += gv / xv;
                    }
                }
            }
            Op::ConcatLast { parts } => {
                let out_last = {
                    let s = self.nodes[id].value.shape();
                    s[s.len() - 1]
                };
                let rows = self.nodes[id].value.numel() / out_last;
                let mut offset = 0;
                for &p in parts {
                    let t = &self.nodes[p.0].value;
                    let w = t.shape()[t.rank() - 1];
                    if self.nodes[p.0].requires {
                        let s = sink!(p);
                        for r in 0..rows {
                            let src = &g[r * out_last + offset..r * out_last + offset + w];
                            for (sv, &gv) in s[r * w..(r + 1) * w].iter_mut().zip(src) {
                                *sv += gv;
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceLast { x, start } => {
                if self.nodes[x.0].requires {
                    let full = {
                        let s = self.nodes[x.0].value.shape();
                        s[s.len() - 1]
                    };
                    let len = {
                        let s = self.nodes[id].value.shape();
                        s[s.len() - 1]
                    };
                    let rows = self.nodes[id].value.numel() / len;
                    let s = sink!(x);
                    for r in 0..rows {
                        let dst = &mut s[r * full + start..r * full + start + len];
                        for (sv, &gv) in dst.iter_mut().zip(&g[r * len..(r + 1) * len]) {
                            *sv += gv;
                        }
                    }
                }
            }
            Op::Row { x, index } => {
                if self.nodes[x.0].requires {
                    let block = self.nodes[id].value.numel();
                    let s = sink!(x);
                    for (sv, &gv) in s[index * block..(index + 1) * block].iter_mut().zip(g) {
                        *sv += gv;
                    }
                }
            }
            Op::StackRows { parts } => {
                let block = if parts.is_empty() {
                    0
                } else {
                    self.nodes[parts[0].0].value.numel()
                };
                for (idx, &p) in parts.iter().enumerate() {
                    if self.nodes[p.0].requires {
                        let s = sink!(p);
                        for (sv, &gv) in s.iter_mut().zip(&g[idx * block..(idx + 1) * block]) {
                            *sv += gv;
                        }
                    }
                }
            }
            Op::Transpose01 { x } => {
                if self.nodes[x.0].requires {
                    let s_out = self.nodes[id].value.shape();
                    let inner = if s_out.len() == 3 { s_out[2] } else { 1 };
                    let back = transpose01_data(g, s_out[0], s_out[1], inner);
                    axpy_slice(&back, sink!(x));
                }
            }
            Op::Reshape { x } => {
                if self.nodes[x.0].requires {
                    axpy_slice(g, sink!(x));
                }
            }
            Op::ReduceMax { x, axis, argmax } => {
                if self.nodes[x.0].requires {
                    let s = self.nodes[x.0].value.shape();
                    let outer = shape_product(&s[..*axis]);
                    let red = s[*axis];
                    let inner = shape_product(&s[*axis + 1..]);
                    let sx = sink!(x);
                    for o in 0..outer {
                        for i in 0..inner {
                            let r = argmax[o * inner + i];
                            sx[(o * red + r) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            }
            Op::ReduceMean { x, axis, mask } => {
                if self.nodes[x.0].requires {
                    let s = self.nodes[x.0].value.shape();
                    let outer = shape_product(&s[..*axis]);
                    let red = s[*axis];
                    let inner = shape_product(&s[*axis + 1..]);
                    let count = mask
                        .as_ref()
                        .map_or(red, |m| m.iter().filter(|&&b| b).count());
                    let inv = F::one() / F::from_f64(count as f64);
                    let sx = sink!(x);
                    for o in 0..outer {
                        for r in 0..red {
                            if mask.as_ref().map_or(false, |m| !m[r]) {
                                continue;
                            }
                            let base = (o * red + r) * inner;
                            for i in 0..inner {
                                sx[base + i] += g[o * inner + i] * inv;
                            }
                        }
                    }
                }
            }
            Op::SumAll { x } => {
                if self.nodes[x.0].requires {
                    axpy(g[0], &vec![F::one(); self.nodes[x.0].value.numel()], sink!(x));
                }
            }
            Op::MaskedSoftmax { z, mask } => {
                if self.nodes[z.0].requires {
                    let p = self.nodes[id].value.data();
                    let mut dot = F::zero();
                    for i in 0..p.len() {
                        if mask[i] {
                            dot += g[i] * p[i];
                        }
                    }
                    let s = sink!(z);
                    for i in 0..p.len() {
                        if mask[i] {
                            s[i] += p[i] * (g[i] - dot);
                        }
                    }
                }
            }
            Op::MaskedLogSoftmax { z, mask, probs } => {
                if self.nodes[z.0].requires {
                    let mut gsum = F::zero();
                    for i in 0..probs.len() {
                        if mask[i] {
                            gsum += g[i];
                        }
                    }
                    let s = sink!(z);
                    for i in 0..probs.len() {
                        if mask[i] {
                            s[i] += g[i] - probs[i] * gsum;
                        }
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                if self.nodes[table.0].requires {
                    let e = self.nodes[table.0].value.shape()[1];
                    let s = sink!(table);
                    for (l, &id_) in ids.iter().enumerate() {
                        for (sv, &gv) in s[id_ * e..(id_ + 1) * e].iter_mut().zip(&g[l * e..(l + 1) * e])
                        {
                            *sv += gv;
                        }
                    }
                }
            }
            Op::CombineGrid {
                q,
                c,
                extras,
                mode,
                q_len,
                c_len,
            } => {
                let e = self.nodes[q.0].value.shape()[1];
                let n = self.nodes[c.0].value.shape()[0];
                let xw = self.nodes[extras.0].value.shape()[1];
                let d = mode.width(e, xw);
                let qd = self.nodes[q.0].value.data();
                let cd = self.nodes[c.0].value.data();
                let req_q = self.nodes[q.0].requires;
                let req_c = self.nodes[c.0].requires;
                let req_x = self.nodes[extras.0].requires;
                // grads are accumulated in local buffers first so the three
                // sinks can be borrowed one at a time
                let mut dq = vec![F::zero(); if req_q { qd.len() } else { 0 }];
                let mut dc = vec![F::zero(); if req_c { cd.len() } else { 0 }];
                let mut dx = vec![F::zero(); if req_x { n * xw } else { 0 }];
                for i in 0..*q_len {
                    let qi = &qd[i * e..(i + 1) * e];
                    for j in 0..*c_len {
                        let cj = &cd[j * e..(j + 1) * e];
                        let cell = &g[(i * n + j) * d..(i * n + j + 1) * d];
                        match mode {
                            CombineMode::QDiffDot => {
                                let gdot = cell[2 * e];
                                if req_q {
                                    let dqi = &mut dq[i * e..(i + 1) * e];
                                    for k in 0..e {
                                        dqi[k] += cell[k] + cell[e + k] + gdot * cj[k];
                                    }
                                }
                                if req_c {
                                    let dcj = &mut dc[j * e..(j + 1) * e];
                                    for k in 0..e {
                                        dcj[k] += -cell[e + k] + gdot * qi[k];
                                    }
                                }
                                if req_x {
                                    let dxj = &mut dx[j * xw..(j + 1) * xw];
                                    for k in 0..xw {
                                        dxj[k] += cell[2 * e + 1 + k];
                                    }
                                }
                            }
                            CombineMode::QC => {
                                if req_q {
                                    let dqi = &mut dq[i * e..(i + 1) * e];
                                    for k in 0..e {
                                        dqi[k] += cell[k];
                                    }
                                }
                                if req_c {
                                    let dcj = &mut dc[j * e..(j + 1) * e];
                                    for k in 0..e {
                                        dcj[k] += cell[e + k];
                                    }
                                }
                                if req_x {
                                    let dxj = &mut dx[j * xw..(j + 1) * xw];
                                    for k in 0..xw {
                                        dxj[k] += cell[2 * e + k];
                                    }
                                }
                            }
                            CombineMode::QCDot => {
                                let gdot = cell[2 * e];
                                if req_q {
                                    let dqi = &mut dq[i * e..(i + 1) * e];
                                    for k in 0..e {
                                        dqi[k] += cell[k] + gdot * cj[k];
                                    }
                                }
                                if req_c {
                                    let dcj = &mut dc[j * e..(j + 1) * e];
                                    for k in 0..e {
                                        dcj[k] += cell[e + k] + gdot * qi[k];
                                    }
                                }
                                if req_x {
                                    let dxj = &mut dx[j * xw..(j + 1) * xw];
                                    for k in 0..xw {
                                        dxj[k] += cell[2 * e + 1 + k];
                                    }
                                }
                            }
                        }
                    }
                }
                if req_q {
                    axpy_slice(&dq, sink!(q));
                }
                if req_c {
                    axpy_slice(&dc, sink!(c));
                }
                if req_x {
                    axpy_slice(&dx, sink!(extras));
                }
            }
            Op::MaskGrid { x, q_len, c_len } => {
                if self.nodes[x.0].requires {
                    let s = self.nodes[x.0].value.shape();
                    let (m, n, w) = (s[0], s[1], s[2]);
                    let mut masked = g.to_vec();
                    zero_padded_cells(&mut masked, m, n, w, *q_len, *c_len);
                    axpy_slice(&masked, sink!(x));
                }
            }
        }
    }
}

fn op_name<F>(op: &Op<F>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul { .. } => "matmul",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Mul { .. } => "mul",
        Op::AddVec { .. } => "add_vec",
        Op::Scale { .. } => "scale",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Tanh { .. } => "tanh",
        Op::Exp { .. } => "exp",
        Op::Log { .. } => "log",
        Op::ConcatLast { .. } => "concat_last",
        Op::SliceLast { .. } => "slice_last",
        Op::Row { .. } => "row",
        Op::StackRows { .. } => "stack_rows",
        Op::Transpose01 { .. } => "transpose01",
        Op::Reshape { .. } => "reshape",
        Op::ReduceMax { .. } => "reduce_max_axis",
        Op::ReduceMean { .. } => "reduce_mean_axis",
        Op::SumAll { .. } => "sum_all",
        Op::MaskedSoftmax { .. } => "masked_softmax",
        Op::MaskedLogSoftmax { .. } => "masked_log_softmax",
        Op::GatherRows { .. } => "gather_rows",
        Op::CombineGrid { .. } => "combine_grid",
        Op::MaskGrid { .. } => "mask_grid",
    }
}

/// out[m, n] += a[m, k] * b[k, n], saxpy inner loop for vectorization.
fn matmul_acc<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

fn transpose01_data<F: Real>(x: &[F], d0: usize, d1: usize, inner: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for a in 0..d0 {
        for b in 0..d1 {
            let src = &x[(a * d1 + b) * inner..(a * d1 + b + 1) * inner];
            out[(b * d0 + a) * inner..(b * d0 + a + 1) * inner].copy_from_slice(src);
        }
    }
    out
}

fn zero_padded_cells<F: Real>(
    data: &mut [F],
    m: usize,
    n: usize,
    w: usize,
    q_len: usize,
    c_len: usize,
) {
    for i in 0..m {
        for j in 0..n {
            if i >= q_len || j >= c_len {
                for v in &mut data[(i * n + j) * w..(i * n + j + 1) * w] {
                    *v = F::zero();
                }
            }
        }
    }
}

fn axpy<F: Real>(alpha: F, x: &[F], out: &mut [F]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += alpha * v;
    }
}

fn axpy_slice<F: Real>(x: &[F], out: &mut [F]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o += v;
    }
}
