//! Tape-based reverse-mode differentiation over dense row-major matrices.
//!
//! Every op records its inputs on a flat tape; [`Graph::backward`] walks the
//! tape once in reverse. Sequences are handled raggedly: a batch of histories
//! is stored as one tall matrix whose rows are grouped into per-sample
//! `Range<usize>` segments, so padding never enters a computation.

use std::ops::Range;

use ndarray::{s, Array2, Axis};

/// Dense 2-D tensor used throughout the model.
pub type Tensor = Array2<f64>;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    AddScalar(Var, Var),
    MulCol(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    ConcatCols(Vec<Var>),
    Gather(Var, Vec<usize>),
    SegmentSoftmax(Var, Vec<Range<usize>>),
    SegmentWeightedSum {
        weights: Var,
        values: Var,
        segments: Vec<Range<usize>>,
    },
    GroupMean(Var, Vec<Vec<usize>>),
    RangeAttention {
        q: Var,
        k: Var,
        v: Var,
        ranges: Vec<Range<usize>>,
        scale: f64,
        // softmax weights, flattened over queries in range order
        probs: Vec<f64>,
    },
    MeanAll(Var),
    SumAll(Var),
    Bce {
        pred: Var,
        labels: Vec<f64>,
        clip: f64,
    },
    KlRows {
        q: Var,
        p: Tensor,
        eps: f64,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A recording of one forward computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every node of a graph.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the output does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

fn scalar(x: f64) -> Tensor {
    Array2::from_elem((1, 1), x)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input (a parameter or a probe point for a gradient check).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// `a · bᵀ`, so a weight stored as `out × in` maps rows of `a` to `out` columns.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulT(a, b), &[a, b])
    }

    /// Adds the `1 × n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        assert_eq!(bv.nrows(), 1, "add_row expects a single bias row");
        let out = self.value(a) + bv;
        self.push(out, Op::AddRow(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a) * c;
        self.push(out, Op::Scale(a, c), &[a])
    }

    /// Multiplies every entry of `a` by the `1 × 1` tensor `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s)[[0, 0]];
        let out = self.value(a) * sv;
        self.push(out, Op::MulScalar(a, s), &[a, s])
    }

    /// Adds the `1 × 1` tensor `s` to every entry of `a`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let sv = self.value(s)[[0, 0]];
        let out = self.value(a) + sv;
        self.push(out, Op::AddScalar(a, s), &[a, s])
    }

    /// Scales row `i` of `a` by `c[i, 0]`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let cv = self.value(c);
        assert_eq!(cv.ncols(), 1);
        let out = self.value(a) * cv;
        self.push(out, Op::MulCol(a, c), &[a, c])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols row mismatch");
        self.push(out, Op::ConcatCols(parts.to_vec()), parts)
    }

    /// Row `r` of the output is row `index[r]` of `a`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>) -> Var {
        let av = self.value(a);
        let out = av.select(Axis(0), &index);
        self.push(out, Op::Gather(a, index), &[a])
    }

    /// Softmax of an `N × 1` column, independently inside each segment.
    pub fn segment_softmax(&mut self, x: Var, segments: Vec<Range<usize>>) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros(xv.raw_dim());
        for seg in &segments {
            if seg.is_empty() {
                continue;
            }
            let max = (seg.start..seg.end)
                .map(|i| xv[[i, 0]])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for i in seg.clone() {
                let e = (xv[[i, 0]] - max).exp();
                out[[i, 0]] = e;
                total += e;
            }
            for i in seg.clone() {
                out[[i, 0]] /= total;
            }
        }
        self.push(out, Op::SegmentSoftmax(x, segments), &[x])
    }

    /// Output row `s` is `Σ_{i ∈ segment s} weights[i] · values[i]`.
    pub fn segment_weighted_sum(
        &mut self,
        weights: Var,
        values: Var,
        segments: Vec<Range<usize>>,
    ) -> Var {
        let wv = self.value(weights);
        let vv = self.value(values);
        let mut out = Array2::zeros((segments.len(), vv.ncols()));
        for (s, seg) in segments.iter().enumerate() {
            let mut row = out.row_mut(s);
            for i in seg.clone() {
                row.scaled_add(wv[[i, 0]], &vv.row(i));
            }
        }
        self.push(
            out,
            Op::SegmentWeightedSum {
                weights,
                values,
                segments,
            },
            &[weights, values],
        )
    }

    /// Output row `s` is the mean of the rows listed in `groups[s]`; empty groups give zeros.
    pub fn group_mean(&mut self, x: Var, groups: Vec<Vec<usize>>) -> Var {
        let xv = self.value(x);
        let mut out = Array2::zeros((groups.len(), xv.ncols()));
        for (s, group) in groups.iter().enumerate() {
            if group.is_empty() {
                continue;
            }
            let inv = 1.0 / group.len() as f64;
            let mut row = out.row_mut(s);
            for &i in group {
                row.scaled_add(inv, &xv.row(i));
            }
        }
        self.push(out, Op::GroupMean(x, groups), &[x])
    }

    /// Scaled dot-product attention where query row `i` attends over key rows `ranges[i]`.
    ///
    /// `q` has one row per range; `k` and `v` share their row space. An empty
    /// range yields a zero output row.
    pub fn range_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        ranges: Vec<Range<usize>>,
        scale: f64,
    ) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        assert_eq!(qv.nrows(), ranges.len());
        let mut out = Array2::zeros((ranges.len(), vv.ncols()));
        let mut probs = Vec::with_capacity(ranges.iter().map(|r| r.len()).sum());
        let mut logits = Vec::new();
        for (i, range) in ranges.iter().enumerate() {
            if range.is_empty() {
                continue;
            }
            logits.clear();
            let qi = qv.row(i);
            logits.extend(range.clone().map(|j| qi.dot(&kv.row(j)) * scale));
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = probs.len();
            let mut total = 0.0;
            for &l in &logits {
                let e = (l - max).exp();
                total += e;
                probs.push(e);
            }
            let mut row = out.row_mut(i);
            for (p, j) in probs[start..].iter_mut().zip(range.clone()) {
                *p /= total;
                row.scaled_add(*p, &vv.row(j));
            }
        }
        self.push(
            out,
            Op::RangeAttention {
                q,
                k,
                v,
                ranges,
                scale,
                probs,
            },
            &[q, k, v],
        )
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let out = scalar(self.value(a).mean().unwrap_or(0.0));
        self.push(out, Op::MeanAll(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = scalar(self.value(a).sum());
        self.push(out, Op::SumAll(a), &[a])
    }

    /// Mean binary cross entropy of an `N × 1` probability column, with the
    /// probabilities clipped to `[clip, 1 − clip]` before the logs.
    pub fn bce(&mut self, pred: Var, labels: Vec<f64>, clip: f64) -> Var {
        let pv = self.value(pred);
        assert_eq!(pv.len(), labels.len());
        let n = labels.len() as f64;
        let total: f64 = pv
            .iter()
            .zip(&labels)
            .map(|(&p, &y)| {
                let p = p.clamp(clip, 1.0 - clip);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        self.push(
            scalar(total / n),
            Op::Bce { pred, labels, clip },
            &[pred],
        )
    }

    /// Per-row `Σ_c p log(p / max(q, eps))` with `0 · log 0 = 0`; output is `S × 1`.
    pub fn kl_rows(&mut self, q: Var, p: Tensor, eps: f64) -> Var {
        let qv = self.value(q);
        assert_eq!(qv.dim(), p.dim());
        let mut out = Array2::zeros((p.nrows(), 1));
        for (r, (prow, qrow)) in p.outer_iter().zip(qv.outer_iter()).enumerate() {
            out[[r, 0]] = prow
                .iter()
                .zip(qrow.iter())
                .filter(|(&pi, _)| pi > 0.0)
                .map(|(&pi, &qi)| pi * (pi / qi.clamp(eps, 1.0)).ln())
                .sum();
        }
        self.push(out, Op::KlRows { q, p, eps }, &[q])
    }

    /// Reverse pass from a `1 × 1` output.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.value(output).dim(), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[output.0] = Some(scalar(1.0));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, delta: Tensor) {
        if !self.nodes[var.0].requires_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => *existing += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMulT(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g.dot(self.value(*b)));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.t().dot(self.value(*a)));
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g * *c),
            Op::MulScalar(a, s) => {
                let sv = self.value(*s)[[0, 0]];
                if self.wants(*s) {
                    let ds = (g * self.value(*a)).sum();
                    self.accumulate(grads, *s, scalar(ds));
                }
                self.accumulate(grads, *a, g * sv);
            }
            Op::AddScalar(a, s) => {
                if self.wants(*s) {
                    self.accumulate(grads, *s, scalar(g.sum()));
                }
                self.accumulate(grads, *a, g.clone());
            }
            Op::MulCol(a, c) => {
                if self.wants(*c) {
                    let dc = (g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(grads, *c, dc);
                }
                if self.wants(*a) {
                    self.accumulate(grads, *a, g * self.value(*c));
                }
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                d.zip_mut_with(&node.value, |d, &y| {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                d.zip_mut_with(&node.value, |d, &y| *d *= y * (1.0 - y));
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for p in parts {
                    let width = self.value(*p).ncols();
                    if self.wants(*p) {
                        self.accumulate(grads, *p, g.slice(s![.., col..col + width]).to_owned());
                    }
                    col += width;
                }
            }
            Op::Gather(a, index) => {
                if self.wants(*a) {
                    let mut d = Array2::zeros(self.value(*a).raw_dim());
                    for (r, &i) in index.iter().enumerate() {
                        let mut row = d.row_mut(i);
                        row += &g.row(r);
                    }
                    self.accumulate(grads, *a, d);
                }
            }
            Op::SegmentSoftmax(x, segments) => {
                let y = &node.value;
                let mut d = Array2::zeros(y.raw_dim());
                for seg in segments {
                    let dot: f64 = seg.clone().map(|i| y[[i, 0]] * g[[i, 0]]).sum();
                    for i in seg.clone() {
                        d[[i, 0]] = y[[i, 0]] * (g[[i, 0]] - dot);
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::SegmentWeightedSum {
                weights,
                values,
                segments,
            } => {
                let wv = self.value(*weights);
                let vv = self.value(*values);
                let mut dw = Array2::zeros(wv.raw_dim());
                let mut dv = Array2::zeros(vv.raw_dim());
                for (s, seg) in segments.iter().enumerate() {
                    let gs = g.row(s);
                    for i in seg.clone() {
                        dw[[i, 0]] = gs.dot(&vv.row(i));
                        dv.row_mut(i).scaled_add(wv[[i, 0]], &gs);
                    }
                }
                self.accumulate(grads, *weights, dw);
                self.accumulate(grads, *values, dv);
            }
            Op::GroupMean(x, groups) => {
                let mut d = Array2::zeros(self.value(*x).raw_dim());
                for (s, group) in groups.iter().enumerate() {
                    if group.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / group.len() as f64;
                    for &i in group {
                        d.row_mut(i).scaled_add(inv, &g.row(s));
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::RangeAttention {
                q,
                k,
                v,
                ranges,
                scale,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut dq = Array2::zeros(qv.raw_dim());
                let mut dk = Array2::zeros(kv.raw_dim());
                let mut dv = Array2::zeros(vv.raw_dim());
                let mut dprob = Vec::new();
                let mut offset = 0;
                for (i, range) in ranges.iter().enumerate() {
                    if range.is_empty() {
                        continue;
                    }
                    let p = &probs[offset..offset + range.len()];
                    offset += range.len();
                    let gi = g.row(i);
                    dprob.clear();
                    dprob.extend(range.clone().map(|j| gi.dot(&vv.row(j))));
                    let dot: f64 = p.iter().zip(&dprob).map(|(a, b)| a * b).sum();
                    let qi = qv.row(i);
                    for ((&pj, &dpj), j) in p.iter().zip(&dprob).zip(range.clone()) {
                        dv.row_mut(j).scaled_add(pj, &gi);
                        let dlogit = pj * (dpj - dot) * scale;
                        dq.row_mut(i).scaled_add(dlogit, &kv.row(j));
                        dk.row_mut(j).scaled_add(dlogit, &qi);
                    }
                }
                self.accumulate(grads, *q, dq);
                self.accumulate(grads, *k, dk);
                self.accumulate(grads, *v, dv);
            }
            Op::MeanAll(a) => {
                let av = self.value(*a);
                let n = av.len().max(1) as f64;
                self.accumulate(grads, *a, Array2::from_elem(av.raw_dim(), g[[0, 0]] / n));
            }
            Op::SumAll(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, Array2::from_elem(av.raw_dim(), g[[0, 0]]));
            }
            Op::Bce { pred, labels, clip } => {
                let pv = self.value(*pred);
                let n = labels.len() as f64;
                let mut d = Array2::zeros(pv.raw_dim());
                for ((dst, &p), &y) in d.iter_mut().zip(pv.iter()).zip(labels) {
                    if p > *clip && p < 1.0 - *clip {
                        *dst = -g[[0, 0]] / n * (y / p - (1.0 - y) / (1.0 - p));
                    }
                }
                self.accumulate(grads, *pred, d);
            }
            Op::KlRows { q, p, eps } => {
                let qv = self.value(*q);
                let mut d = Array2::zeros(qv.raw_dim());
                for r in 0..p.nrows() {
                    let gr = g[[r, 0]];
                    for c in 0..p.ncols() {
                        let (pi, qi) = (p[[r, c]], qv[[r, c]]);
                        if pi > 0.0 && qi > *eps && qi < 1.0 {
                            d[[r, c]] = -gr * pi / qi;
                        }
                    }
                }
                self.accumulate(grads, *q, d);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
