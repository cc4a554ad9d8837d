//! Reverse-mode differentiation over a dynamically built tape of scalars,
//! vectors and matrices.
//!
//! The graph is rebuilt per training step (define-by-run). Node values are
//! computed eagerly as nodes are pushed; `Tape::forward` recomputes every
//! value in insertion order, which is also topological order. Gradients
//! accumulate additively into per-node buffers zeroed at the start of each
//! backward pass.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdError {
    #[error("backward root must be scalar, got {0:?}")]
    NonScalarRoot(Shape),
    #[error("non-finite value encountered at parameter `{0}`")]
    NonFinite(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Shape {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Scalar => 1,
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Dense real array of rank <= 2, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Value {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl Value {
    pub fn scalar(x: f64) -> Self {
        Value { shape: Shape::Scalar, data: vec![x] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Value { shape: Shape::Vector(data.len()), data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Value { shape: Shape::Matrix(rows, cols), data }
    }

    pub fn zeros(shape: Shape) -> Self {
        Value { shape, data: vec![0.0; shape.len()] }
    }

    pub fn as_scalar(&self) -> f64 {
        assert_eq!(self.shape, Shape::Scalar);
        self.data[0]
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug)]
enum Op {
    Const,
    Param,
    /// Elementwise; either operand may be scalar (broadcast).
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    MatVec(NodeId, NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Neg(NodeId),
    Sum(NodeId),
    Dot(NodeId, NodeId),
    Norm2(NodeId),
    Concat(Vec<NodeId>),
    Slice(NodeId, usize, usize),
    Index(NodeId, usize),
}

struct Node {
    op: Op,
    shape: Shape,
    value: Vec<f64>,
    grad: Vec<f64>,
}

/// Computation tape. Insertion order is topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
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

    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        assert_eq!(self.nodes[id.0].shape, Shape::Scalar);
        self.nodes[id.0].value[0]
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }

    /// Overwrite a parameter node's value in place (shape must match).
    pub fn set_param_value(&mut self, id: NodeId, data: &[f64]) {
        let node = &mut self.nodes[id.0];
        assert!(matches!(node.op, Op::Param | Op::Const), "not a leaf node");
        assert_eq!(node.value.len(), data.len(), "param value length mismatch");
        node.value.copy_from_slice(data);
    }

    fn push(&mut self, op: Op, shape: Shape, value: Vec<f64>) -> NodeId {
        debug_assert_eq!(shape.len(), value.len());
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, shape, grad: vec![0.0; value.len()], value });
        id
    }

    pub fn constant(&mut self, v: Value) -> NodeId {
        self.push(Op::Const, v.shape, v.data)
    }

    pub fn param(&mut self, v: Value) -> NodeId {
        let id = self.push(Op::Param, v.shape, v.data);
        self.params.push(id);
        id
    }

    fn binary_shape(&self, a: NodeId, b: NodeId, what: &str) -> Shape {
        let (sa, sb) = (self.nodes[a.0].shape, self.nodes[b.0].shape);
        if sa == sb {
            sa
        } else if sa == Shape::Scalar {
            sb
        } else if sb == Shape::Scalar {
            sa
        } else {
            panic!("{what}: incompatible shapes {sa:?} and {sb:?}");
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = self.binary_shape(a, b, "add");
        let out = broadcast_zip(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x + y);
        self.push(Op::Add(a, b), shape, out)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = self.binary_shape(a, b, "sub");
        let out = broadcast_zip(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x - y);
        self.push(Op::Sub(a, b), shape, out)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = self.binary_shape(a, b, "mul");
        let out = broadcast_zip(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x * y);
        self.push(Op::Mul(a, b), shape, out)
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = self.binary_shape(a, b, "div");
        let out = broadcast_zip(&self.nodes[a.0].value, &self.nodes[b.0].value, |x, y| x / y);
        self.push(Op::Div(a, b), shape, out)
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let (rows, cols) = match self.nodes[w.0].shape {
            Shape::Matrix(r, c) => (r, c),
            s => panic!("matvec: left operand must be a matrix, got {s:?}"),
        };
        match self.nodes[x.0].shape {
            Shape::Vector(n) if n == cols => {}
            s => panic!("matvec: expected vector of dim {cols}, got {s:?}"),
        }
        let mut out = vec![0.0; rows];
        matvec_into(&self.nodes[w.0].value, &self.nodes[x.0].value, rows, cols, &mut out);
        self.push(Op::MatVec(w, x), Shape::Vector(rows), out)
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: Op) -> NodeId {
        let shape = self.nodes[a.0].shape;
        let out = self.nodes[a.0].value.iter().map(|&x| f(x)).collect();
        self.push(op, shape, out)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::ln, Op::Log(a))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| -x, Op::Neg(a))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.iter().sum();
        self.push(Op::Sum(a), Shape::Scalar, vec![s])
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.len(), vb.len(), "dot: length mismatch");
        let s = dot(va, vb);
        self.push(Op::Dot(a, b), Shape::Scalar, vec![s])
    }

    pub fn norm2(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a.0].value.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.push(Op::Norm2(a), Shape::Scalar, vec![s])
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut out = Vec::new();
        for &p in parts {
            match self.nodes[p.0].shape {
                Shape::Scalar | Shape::Vector(_) => out.extend_from_slice(&self.nodes[p.0].value),
                s => panic!("concat: matrix operand not supported, got {s:?}"),
            }
        }
        self.push(Op::Concat(parts.to_vec()), Shape::Vector(out.len()), out)
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        match self.nodes[a.0].shape {
            Shape::Vector(n) if start + len <= n => {}
            s => panic!("slice: out of range on {s:?}"),
        }
        let out = self.nodes[a.0].value[start..start + len].to_vec();
        self.push(Op::Slice(a, start, len), Shape::Vector(len), out)
    }

    pub fn index(&mut self, a: NodeId, i: usize) -> NodeId {
        match self.nodes[a.0].shape {
            Shape::Vector(n) if i < n => {}
            s => panic!("index: out of range on {s:?}"),
        }
        let out = vec![self.nodes[a.0].value[i]];
        self.push(Op::Index(a, i), Shape::Scalar, out)
    }

    /// Recompute every node value in topological (insertion) order.
    /// Leaf nodes keep their current values.
    pub fn forward(&mut self) {
        for idx in 0..self.nodes.len() {
            let (done, rest) = self.nodes.split_at_mut(idx);
            let node = &mut rest[0];
            let val = |id: NodeId| -> &[f64] { &done[id.0].value };
            match &node.op {
                Op::Const | Op::Param => {}
                Op::Add(a, b) => node.value = broadcast_zip(val(*a), val(*b), |x, y| x + y),
                Op::Sub(a, b) => node.value = broadcast_zip(val(*a), val(*b), |x, y| x - y),
                Op::Mul(a, b) => node.value = broadcast_zip(val(*a), val(*b), |x, y| x * y),
                Op::Div(a, b) => node.value = broadcast_zip(val(*a), val(*b), |x, y| x / y),
                Op::MatVec(w, x) => {
                    let (r, c) = match done[w.0].shape {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    matvec_into(val(*w), val(*x), r, c, &mut node.value);
                }
                Op::Tanh(a) => apply_into(val(*a), f64::tanh, &mut node.value),
                Op::Sigmoid(a) => apply_into(val(*a), sigmoid, &mut node.value),
                Op::Exp(a) => apply_into(val(*a), f64::exp, &mut node.value),
                Op::Log(a) => apply_into(val(*a), f64::ln, &mut node.value),
                Op::Neg(a) => apply_into(val(*a), |x| -x, &mut node.value),
                Op::Sum(a) => node.value[0] = val(*a).iter().sum(),
                Op::Dot(a, b) => node.value[0] = dot(val(*a), val(*b)),
                Op::Norm2(a) => {
                    node.value[0] = val(*a).iter().map(|x| x * x).sum::<f64>().sqrt()
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    let parts = parts.clone();
                    for p in parts {
                        let src = &done[p.0].value;
                        node.value[off..off + src.len()].copy_from_slice(src);
                        off += src.len();
                    }
                }
                Op::Slice(a, start, len) => {
                    let (start, len) = (*start, *len);
                    node.value.copy_from_slice(&done[a.0].value[start..start + len]);
                }
                Op::Index(a, i) => node.value[0] = done[a.0].value[*i],
            }
        }
    }

    /// Backpropagate from a scalar root, seeding its gradient with 1.
    pub fn backward(&mut self, root: NodeId) -> Result<(), AdError> {
        if self.nodes[root.0].shape != Shape::Scalar {
            return Err(AdError::NonScalarRoot(self.nodes[root.0].shape));
        }
        self.backward_seeded(root, &[1.0]);
        Ok(())
    }

    /// Backpropagate from any node with an explicit output gradient seed.
    pub fn backward_seeded(&mut self, root: NodeId, seed: &[f64]) {
        assert_eq!(seed.len(), self.nodes[root.0].value.len(), "seed length mismatch");
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = 0.0);
        }
        self.nodes[root.0].grad.copy_from_slice(seed);

        for idx in (0..=root.0).rev() {
            let (inputs, rest) = self.nodes.split_at_mut(idx);
            let node = &rest[0];
            if node.grad.iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = &node.grad;
            match &node.op {
                Op::Const | Op::Param => {}
                Op::Add(a, b) => {
                    accumulate_broadcast(&mut inputs[a.0].grad, g, 1.0, None);
                    accumulate_broadcast(&mut inputs[b.0].grad, g, 1.0, None);
                }
                Op::Sub(a, b) => {
                    accumulate_broadcast(&mut inputs[a.0].grad, g, 1.0, None);
                    accumulate_broadcast(&mut inputs[b.0].grad, g, -1.0, None);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    // ga += g * vb, gb += g * va, with scalar broadcast on either side
                    let (va, vb) = (inputs[a.0].value.clone(), inputs[b.0].value.clone());
                    accumulate_broadcast(&mut inputs[a.0].grad, g, 1.0, Some(&vb));
                    accumulate_broadcast(&mut inputs[b.0].grad, g, 1.0, Some(&va));
                }
                Op::Div(a, b) => {
                    let (a, b) = (*a, *b);
                    let (va, vb) = (inputs[a.0].value.clone(), inputs[b.0].value.clone());
                    let inv_b: Vec<f64> = vb.iter().map(|&y| 1.0 / y).collect();
                    accumulate_broadcast(&mut inputs[a.0].grad, g, 1.0, Some(&inv_b));
                    // gb -= g * va / vb^2
                    let factor: Vec<f64> = broadcast_zip(&va, &vb, |x, y| x / (y * y));
                    accumulate_broadcast(&mut inputs[b.0].grad, g, -1.0, Some(&factor));
                }
                Op::MatVec(w, x) => {
                    let (w, x) = (*w, *x);
                    let (rows, cols) = match inputs[w.0].shape {
                        Shape::Matrix(r, c) => (r, c),
                        _ => unreachable!(),
                    };
                    let (wn, xn) = pair_mut(inputs, w.0, x.0);
                    for i in 0..rows {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        let grow = &mut wn.grad[i * cols..(i + 1) * cols];
                        for (gw_ij, x_j) in grow.iter_mut().zip(&xn.value) {
                            *gw_ij += gi * x_j;
                        }
                        let wrow = &wn.value[i * cols..(i + 1) * cols];
                        for (gx_j, w_ij) in xn.grad.iter_mut().zip(wrow) {
                            *gx_j += gi * w_ij;
                        }
                    }
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    for ((ga, gi), yi) in inputs[a.0].grad.iter_mut().zip(g).zip(y) {
                        *ga += gi * (1.0 - yi * yi);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    for ((ga, gi), yi) in inputs[a.0].grad.iter_mut().zip(g).zip(y) {
                        *ga += gi * yi * (1.0 - yi);
                    }
                }
                Op::Exp(a) => {
                    let y = &node.value;
                    for ((ga, gi), yi) in inputs[a.0].grad.iter_mut().zip(g).zip(y) {
                        *ga += gi * yi;
                    }
                }
                Op::Log(a) => {
                    let a = *a;
                    let xv = inputs[a.0].value.clone();
                    for ((ga, gi), xi) in inputs[a.0].grad.iter_mut().zip(g).zip(&xv) {
                        *ga += gi / xi;
                    }
                }
                Op::Neg(a) => {
                    for (ga, gi) in inputs[a.0].grad.iter_mut().zip(g) {
                        *ga -= gi;
                    }
                }
                Op::Sum(a) => {
                    let g0 = g[0];
                    for ga in inputs[a.0].grad.iter_mut() {
                        *ga += g0;
                    }
                }
                Op::Dot(a, b) => {
                    let (a, b) = (*a, *b);
                    let g0 = g[0];
                    let (va, vb) = (inputs[a.0].value.clone(), inputs[b.0].value.clone());
                    for (ga, y) in inputs[a.0].grad.iter_mut().zip(&vb) {
                        *ga += g0 * y;
                    }
                    for (gb, x) in inputs[b.0].grad.iter_mut().zip(&va) {
                        *gb += g0 * x;
                    }
                }
                Op::Norm2(a) => {
                    let a = *a;
                    let y = node.value[0];
                    let g0 = g[0];
                    let xv = inputs[a.0].value.clone();
                    for (ga, xi) in inputs[a.0].grad.iter_mut().zip(&xv) {
                        *ga += g0 * xi / y;
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let dst = &mut inputs[p.0].grad;
                        let len = dst.len();
                        for (d, gi) in dst.iter_mut().zip(&g[off..off + len]) {
                            *d += gi;
                        }
                        off += len;
                    }
                }
                Op::Slice(a, start, _) => {
                    let start = *start;
                    for (ga, gi) in inputs[a.0].grad[start..start + g.len()].iter_mut().zip(g) {
                        *ga += gi;
                    }
                }
                Op::Index(a, i) => {
                    inputs[a.0].grad[*i] += g[0];
                }
            }
        }
    }
}

fn pair_mut<T>(s: &mut [T], i: usize, j: usize) -> (&mut T, &mut T) {
    assert_ne!(i, j);
    if i < j {
        let (lo, hi) = s.split_at_mut(j);
        (&mut lo[i], &mut hi[0])
    } else {
        let (lo, hi) = s.split_at_mut(i);
        (&mut hi[0], &mut lo[j])
    }
}

fn apply_into(src: &[f64], f: impl Fn(f64) -> f64, dst: &mut [f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = f(s);
    }
}

fn matvec_into(w: &[f64], x: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
    for i in 0..rows {
        let row = &w[i * cols..(i + 1) * cols];
        out[i] = dot(row, x);
    }
}

// Four independent accumulators so the reduction vectorizes; the summation
// order differs from a plain sequential sum, which is fine at f64.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let chunks = a.len() / 4;
    let mut acc = [0.0f64; 4];
    for k in 0..chunks {
        let i = 4 * k;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn broadcast_zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    if a.len() == b.len() {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    } else if a.len() == 1 {
        b.iter().map(|&y| f(a[0], y)).collect()
    } else {
        debug_assert_eq!(b.len(), 1);
        a.iter().map(|&x| f(x, b[0])).collect()
    }
}

/// dst += scale * g * factor, where dst may be a scalar accumulating a
/// broadcast input's gradient (then contributions are summed).
fn accumulate_broadcast(dst: &mut [f64], g: &[f64], scale: f64, factor: Option<&[f64]>) {
    match factor {
        None => {
            if dst.len() == g.len() {
                for (d, gi) in dst.iter_mut().zip(g) {
                    *d += scale * gi;
                }
            } else {
                debug_assert_eq!(dst.len(), 1);
                dst[0] += scale * g.iter().sum::<f64>();
            }
        }
        Some(f) => {
            // g has the output length; f has the partner operand's length.
            let term = |i: usize| {
                let fi = if f.len() == 1 { f[0] } else { f[i] };
                scale * g[i] * fi
            };
            if dst.len() == g.len() {
                for (i, d) in dst.iter_mut().enumerate() {
                    *d += term(i);
                }
            } else {
                debug_assert_eq!(dst.len(), 1);
                dst[0] += (0..g.len()).map(term).sum::<f64>();
            }
        }
    }
}

/// One evaluation of a differentiable scalar function of a parameter set:
/// the loss value plus the analytic gradient for each parameter tensor.
pub struct Evaluation {
    pub value: f64,
    pub grads: Vec<Vec<f64>>,
}

/// Compare the analytic gradient of `f` against central finite differences.
///
/// `f` evaluates the function at the given parameter point and returns both
/// the value and per-parameter analytic gradients (same order and shapes as
/// `point`). Returns the max over all parameter entries of
/// |analytic - central| / max(1, |central|).
pub fn grad_check<F>(f: &F, point: &[Value], step: f64) -> Result<f64, AdError>
where
    F: Fn(&[Value]) -> Evaluation,
{
    assert!(step > 0.0, "step must be positive");
    let base = f(point);
    if !base.value.is_finite() {
        return Err(AdError::NonFinite("<function value>".into()));
    }
    assert_eq!(base.grads.len(), point.len(), "gradient count mismatch");

    let mut max_rel = 0.0f64;
    let mut perturbed: Vec<Value> = point.to_vec();
    for (pi, p) in point.iter().enumerate() {
        for ei in 0..p.data.len() {
            let orig = p.data[ei];
            perturbed[pi].data[ei] = orig + step;
            let up = f(&perturbed).value;
            perturbed[pi].data[ei] = orig - step;
            let down = f(&perturbed).value;
            perturbed[pi].data[ei] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(AdError::NonFinite(format!("param {pi} entry {ei}")));
            }
            let central = (up - down) / (2.0 * step);
            let analytic = base.grads[pi][ei];
            if !analytic.is_finite() {
                return Err(AdError::NonFinite(format!("param {pi} entry {ei}")));
            }
            let rel = (analytic - central).abs() / central.abs().max(1.0);
            max_rel = max_rel.max(rel);
        }
    }
    Ok(max_rel)
}
