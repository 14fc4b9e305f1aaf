//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and the handles
//! of its inputs. [`Tape::backward`] walks the nodes in reverse recording
//! order, so each node is visited once after all of its consumers.

use std::sync::Arc;

use crate::tensor::gemm;
use crate::{Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row-grouping used by [`Tape::segment_mean`], stored in CSR layout.
///
/// Output row `i` is the mean of the input rows listed in segment `i`; an
/// empty segment produces a zero row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    offsets: Vec<usize>,
    sources: Vec<usize>,
    source_rows: usize,
}

impl Segments {
    pub fn new(offsets: Vec<usize>, sources: Vec<usize>, source_rows: usize) -> Result<Self> {
        let ok_offsets = offsets.first() == Some(&0)
            && offsets.windows(2).all(|w| w[0] <= w[1])
            && offsets.last() == Some(&sources.len());
        if !ok_offsets {
            return Err(TensorError::BadLength {
                rows: offsets.len().saturating_sub(1),
                cols: 1,
                len: sources.len(),
            });
        }
        if let Some(&bad) = sources.iter().find(|&&s| s >= source_rows) {
            return Err(TensorError::RowOutOfRange {
                index: bad,
                rows: source_rows,
            });
        }
        Ok(Self {
            offsets,
            sources,
            source_rows,
        })
    }

    pub fn from_lists<L: AsRef<[usize]>>(lists: &[L], source_rows: usize) -> Result<Self> {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut sources = Vec::new();
        offsets.push(0);
        for l in lists {
            sources.extend_from_slice(l.as_ref());
            offsets.push(sources.len());
        }
        Self::new(offsets, sources, source_rows)
    }

    pub fn segment_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn source_rows(&self) -> usize {
        self.source_rows
    }

    pub fn segment(&self, i: usize) -> &[usize] {
        &self.sources[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Total number of (segment, source) entries.
    pub fn nnz(&self) -> usize {
        self.sources.len()
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Affine(Var, f64),
    Relu(Var),
    Sigmoid(Var),
    RowMean(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SegmentMean(Var, Arc<Segments>),
    RowDot(Var, Var),
    Log(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for a single backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `v`, or `None` if nothing flowed into it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, zero-filled when nothing flowed into it.
    pub fn take(&mut self, v: Var) -> Tensor {
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => g,
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    /// Registers a leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a leaf treated as a constant.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let rg = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, rg)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push_op(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b))
            .map_err(|_| mismatch("add", self.value(a), self.value(b)))?;
        Ok(self.push_op(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(mismatch("add_row", x, r));
        }
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        Ok(self.push_op(out, Op::AddRow(a, row), &[a, row]))
    }

    /// `scale * a + offset`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, offset: f64) -> Var {
        let out = self.value(a).map(|x| scale * x + offset);
        self.push_op(out, Op::Affine(a, scale), &[a])
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push_op(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push_op(out, Op::Sigmoid(a), &[a])
    }

    /// Mean over rows, producing a `1 x cols` tensor.
    pub fn row_mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() == 0 {
            return Err(TensorError::ShapeMismatch {
                op: "row_mean",
                left: x.shape(),
                right: (1, x.cols()),
            });
        }
        let mut out = Tensor::zeros(1, x.cols());
        for i in 0..x.rows() {
            for (o, v) in out.data_mut().iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        let inv = 1.0 / x.rows() as f64;
        for o in out.data_mut() {
            *o *= inv;
        }
        Ok(self.push_op(out, Op::RowMean(a), &[a]))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let x = self.value(a);
        let mut out = Tensor::zeros(rows.len(), x.cols());
        for (o, &r) in rows.iter().enumerate() {
            if r >= x.rows() {
                return Err(TensorError::RowOutOfRange {
                    index: r,
                    rows: x.rows(),
                });
            }
            out.row_mut(o).copy_from_slice(x.row(r));
        }
        Ok(self.push_op(out, Op::GatherRows(a, rows.to_vec()), &[a]))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::EmptyConcat)?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let x = self.value(p);
            if x.cols() != cols {
                return Err(mismatch("concat_rows", self.value(*first), x));
            }
            rows += x.rows();
            data.extend_from_slice(x.data());
        }
        let out = Tensor::from_vec(rows, cols, data)?;
        Ok(self.push_op(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Per-segment mean of source rows; see [`Segments`].
    pub fn segment_mean(&mut self, a: Var, segments: Arc<Segments>) -> Result<Var> {
        let x = self.value(a);
        if segments.source_rows() != x.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "segment_mean",
                left: x.shape(),
                right: (segments.source_rows(), x.cols()),
            });
        }
        let cols = x.cols();
        let mut out = Tensor::zeros(segments.segment_count(), cols);
        for s in 0..segments.segment_count() {
            let src = segments.segment(s);
            if src.is_empty() {
                continue;
            }
            let dst = out.row_mut(s);
            for &u in src {
                for (d, v) in dst.iter_mut().zip(x.row(u)) {
                    *d += v;
                }
            }
            let inv = 1.0 / src.len() as f64;
            for d in dst.iter_mut() {
                *d *= inv;
            }
        }
        Ok(self.push_op(out, Op::SegmentMean(a, segments), &[a]))
    }

    /// Inner product of every row of `a` with the single row `q`; `n x 1`.
    pub fn row_dot(&mut self, a: Var, q: Var) -> Result<Var> {
        let (x, qv) = (self.value(a), self.value(q));
        if qv.rows() != 1 || qv.cols() != x.cols() {
            return Err(mismatch("row_dot", x, qv));
        }
        let mut out = Tensor::zeros(x.rows(), 1);
        for i in 0..x.rows() {
            out.data_mut()[i] = x.row(i).iter().zip(qv.data()).map(|(a, b)| a * b).sum();
        }
        Ok(self.push_op(out, Op::RowDot(a, q), &[a, q]))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = x.data().iter().find(|&&v| v.is_nan() || v <= 0.0) {
            return Err(TensorError::NonPositiveLog(bad));
        }
        let out = x.map(f64::ln);
        Ok(self.push_op(out, Op::Log(a), &[a]))
    }

    /// Clamps into `[lo, hi]`; gradient is zero outside that range.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        self.push_op(out, Op::Clamp(a, lo, hi), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push_op(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    /// Reverse pass from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        if !self.requires_grad(loss) {
            return Err(TensorError::DetachedLoss);
        }
        let nodes = self.nodes;
        let shapes: Vec<_> = nodes.iter().map(|n| n.value.shape()).collect();
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let needs = |v: &Var| nodes[v.0].requires_grad;
            let val = |v: &Var| &nodes[v.0].value;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::MatMul(a, b) => {
                    if needs(a) {
                        let mut da = Tensor::zeros(val(a).rows(), val(a).cols());
                        gemm(&g, false, val(b), true, &mut da, 0.0);
                        accumulate(&mut grads, *a, da);
                    }
                    if needs(b) {
                        let mut db = Tensor::zeros(val(b).rows(), val(b).cols());
                        gemm(val(a), true, &g, false, &mut db, 0.0);
                        accumulate(&mut grads, *b, db);
                    }
                }
                Op::Add(a, b) => {
                    if needs(a) && needs(b) {
                        accumulate(&mut grads, *a, g.clone());
                        accumulate(&mut grads, *b, g);
                    } else if needs(a) {
                        accumulate(&mut grads, *a, g);
                    } else {
                        accumulate(&mut grads, *b, g);
                    }
                }
                Op::AddRow(a, r) => {
                    if needs(r) {
                        let mut dr = Tensor::zeros(1, g.cols());
                        for k in 0..g.rows() {
                            for (d, x) in dr.data_mut().iter_mut().zip(g.row(k)) {
                                *d += x;
                            }
                        }
                        accumulate(&mut grads, *r, dr);
                    }
                    if needs(a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Affine(a, s) => {
                    let s = *s;
                    accumulate(&mut grads, *a, g.map(|x| x * s));
                }
                Op::Relu(a) => {
                    let mut d = g;
                    for (x, y) in d.data_mut().iter_mut().zip(node.value.data()) {
                        if *y <= 0.0 {
                            *x = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    for (x, y) in d.data_mut().iter_mut().zip(node.value.data()) {
                        *x *= y * (1.0 - y);
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::RowMean(a) => {
                    let rows = val(a).rows();
                    let inv = 1.0 / rows as f64;
                    let mut d = Tensor::zeros(rows, g.cols());
                    for k in 0..rows {
                        for (x, y) in d.row_mut(k).iter_mut().zip(g.data()) {
                            *x = y * inv;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::GatherRows(a, idx) => {
                    let mut d = Tensor::zeros(val(a).rows(), val(a).cols());
                    for (o, &r) in idx.iter().enumerate() {
                        for (x, y) in d.row_mut(r).iter_mut().zip(g.row(o)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let r = val(p).rows();
                        if needs(p) {
                            let slice = g.data()[start * g.cols()..(start + r) * g.cols()].to_vec();
                            accumulate(&mut grads, *p, Tensor::from_vec(r, g.cols(), slice)?);
                        }
                        start += r;
                    }
                }
                Op::SegmentMean(a, seg) => {
                    let mut d = Tensor::zeros(val(a).rows(), val(a).cols());
                    for s in 0..seg.segment_count() {
                        let src = seg.segment(s);
                        if src.is_empty() {
                            continue;
                        }
                        let inv = 1.0 / src.len() as f64;
                        let gs = g.row(s);
                        for &u in src {
                            for (x, y) in d.row_mut(u).iter_mut().zip(gs) {
                                *x += y * inv;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::RowDot(a, q) => {
                    let (x, qv) = (val(a), val(q));
                    if needs(a) {
                        let mut d = Tensor::zeros(x.rows(), x.cols());
                        for k in 0..x.rows() {
                            let gk = g.data()[k];
                            for (dx, qq) in d.row_mut(k).iter_mut().zip(qv.data()) {
                                *dx = gk * qq;
                            }
                        }
                        accumulate(&mut grads, *a, d);
                    }
                    if needs(q) {
                        let mut dq = Tensor::zeros(1, x.cols());
                        for k in 0..x.rows() {
                            let gk = g.data()[k];
                            for (d, xx) in dq.data_mut().iter_mut().zip(x.row(k)) {
                                *d += gk * xx;
                            }
                        }
                        accumulate(&mut grads, *q, dq);
                    }
                }
                Op::Log(a) => {
                    let mut d = g;
                    for (x, v) in d.data_mut().iter_mut().zip(val(a).data()) {
                        *x /= v;
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut d = g;
                    for (x, v) in d.data_mut().iter_mut().zip(val(a).data()) {
                        if *v < *lo || *v > *hi {
                            *x = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, d);
                }
                Op::Sum(a) => {
                    let (r, c) = val(a).shape();
                    accumulate(&mut grads, *a, Tensor::filled(r, c, g.data()[0]));
                }
            }
        }

        // Only leaf gradients are meaningful to callers.
        for (i, n) in nodes.iter().enumerate() {
            if !matches!(n.op, Op::Leaf) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads, shapes })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (a, b) in existing.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::from_vec(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn sigmoid_of_zero_is_half() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::scalar(0.0));
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).item(), Some(0.5));
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        // loss = sigmoid(w * x) with w = 0, x = 1.
        let mut tape = Tape::new();
        let w = tape.param(Tensor::scalar(0.0));
        let x = tape.constant(Tensor::scalar(1.0));
        let z = tape.matmul(w, x).unwrap();
        let loss = tape.sigmoid(z);
        let mut g = tape.backward(loss).unwrap();
        assert_eq!(g.take(w).item(), Some(0.25));
    }

    #[test]
    fn unused_param_gets_zero_grad() {
        let mut tape = Tape::new();
        let w = tape.param(t(1, 2, &[1.0, 2.0]));
        let unused = tape.param(t(2, 2, &[1.0; 4]));
        let loss = tape.sum(w);
        let mut g = tape.backward(loss).unwrap();
        assert!(g.get(unused).is_none());
        assert_eq!(g.take(unused), Tensor::zeros(2, 2));
        assert_eq!(g.take(w), t(1, 2, &[1.0, 1.0]));
    }

    #[test]
    fn detached_loss_is_an_error() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::scalar(3.0));
        let loss = tape.sum(c);
        assert!(matches!(
            tape.backward(loss),
            Err(TensorError::DetachedLoss)
        ));
    }

    #[test]
    fn non_scalar_loss_is_an_error() {
        let mut tape = Tape::new();
        let w = tape.param(Tensor::zeros(2, 2));
        assert!(matches!(
            tape.backward(w),
            Err(TensorError::NonScalarLoss((2, 2)))
        ));
    }

    #[test]
    fn log_rejects_non_positive() {
        let mut tape = Tape::new();
        let x = tape.constant(t(1, 2, &[1.0, 0.0]));
        assert!(matches!(tape.log(x), Err(TensorError::NonPositiveLog(_))));
    }

    #[test]
    fn segment_mean_on_path_graph() {
        // path 0-1-2-3; neighbour means computed by hand
        let lists = vec![vec![1], vec![0, 2], vec![1, 3], vec![2]];
        let seg = Arc::new(Segments::from_lists(&lists, 4).unwrap());
        let x = t(4, 2, &[1.0, 0.0, 0.0, 2.0, 4.0, 4.0, -1.0, 3.0]);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let m = tape.segment_mean(xv, seg).unwrap();
        // per-node loop oracle
        let mut expect = Tensor::zeros(4, 2);
        for (v, nb) in lists.iter().enumerate() {
            for j in 0..2 {
                let s: f64 = nb.iter().map(|&u| x.get(u, j)).sum();
                expect.set(v, j, s / nb.len() as f64);
            }
        }
        assert_eq!(tape.value(m), &expect);
        assert_eq!(tape.value(m).row(1), &[2.5, 2.0]);
    }

    #[test]
    fn empty_segment_yields_zero_row() {
        let seg = Arc::new(Segments::from_lists(&[vec![], vec![0usize]], 1).unwrap());
        let mut tape = Tape::new();
        let x = tape.param(t(1, 3, &[1.0, 2.0, 3.0]));
        let m = tape.segment_mean(x, seg).unwrap();
        assert_eq!(tape.value(m).row(0), &[0.0, 0.0, 0.0]);
        let s = tape.sum(m);
        let mut g = tape.backward(s).unwrap();
        assert_eq!(g.take(x), t(1, 3, &[1.0, 1.0, 1.0]));
    }

    #[test]
    fn segments_validate_sources() {
        assert!(Segments::from_lists(&[vec![3usize]], 2).is_err());
        assert!(Segments::new(vec![0, 2], vec![0], 1).is_err());
    }

    #[test]
    fn gather_and_concat_route_gradients() {
        let mut tape = Tape::new();
        let a = tape.param(t(3, 1, &[1.0, 2.0, 3.0]));
        let b = tape.param(t(1, 1, &[10.0]));
        let c = tape.concat_rows(&[a, b]).unwrap();
        let g = tape.gather_rows(c, &[3, 0, 0]).unwrap();
        assert_eq!(tape.value(g).data(), &[10.0, 1.0, 1.0]);
        let s = tape.sum(g);
        let mut grads = tape.backward(s).unwrap();
        assert_eq!(grads.take(a).data(), &[2.0, 0.0, 0.0]);
        assert_eq!(grads.take(b).data(), &[1.0]);
    }

    /// Central-difference check of a small composite expression touching
    /// every primitive.
    #[test]
    fn composite_matches_finite_differences() {
        let x0 = Tensor::from_fn(4, 3, |i, j| ((i * 3 + j) as f64 * 0.37).sin());
        let w0 = Tensor::from_fn(3, 2, |i, j| ((i + 2 * j) as f64 * 0.71).cos() * 0.5);
        let b0 = t(1, 2, &[0.1, -0.2]);
        let seg = Arc::new(
            Segments::from_lists(&[vec![1, 2], vec![0], vec![], vec![0, 1, 2]], 4).unwrap(),
        );

        let f = |tape: &mut Tape, x: Var, w: Var, b: Var| -> Var {
            let agg = tape.segment_mean(x, seg.clone()).unwrap();
            let h = tape.add(x, agg).unwrap();
            let z = tape.matmul(h, w).unwrap();
            let z = tape.add_row(z, b).unwrap();
            let r = tape.relu(z);
            let r = tape.affine(r, 1.5, 0.0);
            let q = tape.gather_rows(r, &[0, 3]).unwrap();
            let q = tape.row_mean(q).unwrap();
            let logits = tape.row_dot(r, q).unwrap();
            let p = tape.sigmoid(logits);
            let p = tape.clamp(p, 1e-12, 1.0 - 1e-12);
            let l = tape.log(p).unwrap();
            let s = tape.sum(l);
            tape.scale(s, -1.0)
        };
        let eval = |x: &Tensor, w: &Tensor, b: &Tensor| {
            let mut tape = Tape::new();
            let (xv, wv, bv) = (
                tape.constant(x.clone()),
                tape.constant(w.clone()),
                tape.constant(b.clone()),
            );
            let l = f(&mut tape, xv, wv, bv);
            tape.value(l).item().unwrap()
        };

        let mut tape = Tape::new();
        let (xv, wv, bv) = (
            tape.param(x0.clone()),
            tape.param(w0.clone()),
            tape.param(b0.clone()),
        );
        let l = f(&mut tape, xv, wv, bv);
        let mut g = tape.backward(l).unwrap();
        let (gx, gw, gb) = (g.take(xv), g.take(wv), g.take(bv));

        let h = 1e-6;
        let check = |analytic: &Tensor, which: usize| {
            for k in 0..analytic.len() {
                let (mut xp, mut wp, mut bp) = (x0.clone(), w0.clone(), b0.clone());
                let (mut xm, mut wm, mut bm) = (x0.clone(), w0.clone(), b0.clone());
                match which {
                    0 => {
                        xp.data_mut()[k] += h;
                        xm.data_mut()[k] -= h;
                    }
                    1 => {
                        wp.data_mut()[k] += h;
                        wm.data_mut()[k] -= h;
                    }
                    _ => {
                        bp.data_mut()[k] += h;
                        bm.data_mut()[k] -= h;
                    }
                }
                let num = (eval(&xp, &wp, &bp) - eval(&xm, &wm, &bm)) / (2.0 * h);
                let a = analytic.data()[k];
                let denom = a.abs().max(num.abs()).max(1e-6);
                assert!(
                    (a - num).abs() / denom < 1e-5,
                    "param {which} coord {k}: {a} vs {num}"
                );
            }
        };
        check(&gx, 0);
        check(&gw, 1);
        check(&gb, 2);
    }
}
