use std::collections::HashMap;

use super::{lit, ParamId, ParamStore, Scalar, Shape};
use crate::rng::RngStream;
use crate::{Error, Result};

/// Clamp applied to probabilities inside the binary cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param,
    MatMul(NodeId, NodeId),
    MatMulT(NodeId, NodeId),
    Bmm(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    BroadcastAdd(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId),
    Abs(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    Softmax(NodeId, usize),
    Sum(NodeId, Option<usize>),
    Mean(NodeId),
    Reshape(NodeId),
    Concat(NodeId, NodeId, usize),
    SliceRows(NodeId, usize),
    RepeatRows(NodeId, usize),
    GatherRows(NodeId, Vec<usize>),
    SelectRows(Vec<bool>, NodeId, NodeId),
    Dropout(NodeId, Vec<T>),
    Bce(NodeId, Vec<T>),
}

#[derive(Debug)]
enum Data<T> {
    Owned(Vec<T>),
    Param(ParamId),
}

#[derive(Debug)]
struct Node<T> {
    shape: Shape,
    data: Data<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single forward computation. Nodes are appended in creation order, which
/// is a valid topological order, so the graph is acyclic by construction.
pub struct Graph<'p, T: Scalar> {
    store: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
    param_nodes: HashMap<ParamId, NodeId>,
}

fn mismatch(op: &'static str, a: &Shape, b: &Shape) -> Error {
    Error::ShapeMismatch {
        op,
        left: a.0.clone(),
        right: b.0.clone(),
    }
}

// out[m,n] = a[m,k] * b[k,n]
fn mm<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
}

// out[m,n] += a[m,k] * b[n,k]^T
fn mm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc = acc + x * y;
            }
            out[i * n + j] = out[i * n + j] + acc;
        }
    }
}

// out[k,n] += a[m,k]^T * b[m,n]
fn mm_tn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize, out: &mut [T]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + aip * bv;
            }
        }
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(store: &'p ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> &Shape {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        match &self.nodes[id.0].data {
            Data::Owned(v) => v,
            Data::Param(p) => &self.store.get(*p).value,
        }
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.value(id)[0]
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, shape: Shape, values: Vec<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        debug_assert_eq!(shape.numel(), values.len());
        self.nodes.push(Node {
            shape,
            data: Data::Owned(values),
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].requires_grad)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, shape: impl Into<Shape>, values: Vec<T>) -> Result<NodeId> {
        let shape = shape.into();
        if shape.numel() != values.len() {
            return Err(Error::ShapeMismatch {
                op: "constant",
                left: shape.0,
                right: vec![values.len()],
            });
        }
        Ok(self.push(shape, values, Op::Constant, false))
    }

    /// Leaf node backed by a stored parameter. Repeated calls return the
    /// same node so gradients from every use are summed in one place.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(&n) = self.param_nodes.get(&id) {
            return n;
        }
        let p = self.store.get(id);
        self.nodes.push(Node {
            shape: p.shape.clone(),
            data: Data::Param(id),
            op: Op::Param,
            requires_grad: p.requires_grad,
        });
        let n = NodeId(self.nodes.len() - 1);
        self.param_nodes.insert(id, n);
        n
    }

    fn matrix(&self, id: NodeId, op: &'static str) -> Result<(usize, usize)> {
        let s = self.shape(id);
        if s.rank() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                left: s.0.clone(),
                right: vec![],
            });
        }
        Ok((s.0[0], s.0[1]))
    }

    /// `a[m,k] · b[k,n]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.matrix(a, "matmul")?;
        let (k2, n) = self.matrix(b, "matmul")?;
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        mm(self.value(a), self.value(b), m, k, n, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Shape::new(&[m, n]), out, Op::MatMul(a, b), rg))
    }

    /// `a[m,k] · b[n,k]ᵀ`; the natural layout for `(out, in)` weight matrices.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, k) = self.matrix(a, "matmul_t")?;
        let (n, k2) = self.matrix(b, "matmul_t")?;
        if k != k2 {
            return Err(mismatch("matmul_t", self.shape(a), self.shape(b)));
        }
        let mut out = vec![T::zero(); m * n];
        mm_nt(self.value(a), self.value(b), m, k, n, &mut out);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Shape::new(&[m, n]), out, Op::MatMulT(a, b), rg))
    }

    /// Batched product `a[b,m,k] · c[b,k,n]`.
    pub fn bmm(&mut self, a: NodeId, c: NodeId) -> Result<NodeId> {
        let (sa, sc) = (self.shape(a).clone(), self.shape(c).clone());
        if sa.rank() != 3 || sc.rank() != 3 || sa.0[0] != sc.0[0] || sa.0[2] != sc.0[1] {
            return Err(mismatch("bmm", &sa, &sc));
        }
        let (bt, m, k, n) = (sa.0[0], sa.0[1], sa.0[2], sc.0[2]);
        let mut out = vec![T::zero(); bt * m * n];
        {
            let (av, cv) = (self.value(a), self.value(c));
            for b in 0..bt {
                mm(
                    &av[b * m * k..(b + 1) * m * k],
                    &cv[b * k * n..(b + 1) * k * n],
                    m,
                    k,
                    n,
                    &mut out[b * m * n..(b + 1) * m * n],
                );
            }
        }
        let rg = self.rg(&[a, c]);
        Ok(self.push(Shape::new(&[bt, m, n]), out, Op::Bmm(a, c), rg))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op<T>, f: impl Fn(T, T) -> T) -> NodeId {
        let out: Vec<T> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(&[a, b]);
        let shape = self.shape(a).clone();
        self.push(shape, out, op, rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn pointwise_mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("pointwise_mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds vector `v` (shape `[d]` or `[1, d]`) to every row of `m[.., d]`.
    pub fn broadcast_add(&mut self, m: NodeId, v: NodeId) -> Result<NodeId> {
        let (sm, sv) = (self.shape(m).clone(), self.shape(v).clone());
        let d = sv.numel();
        let ok = sm.rank() >= 1 && *sm.0.last().unwrap() == d && (sv.rank() == 1 || (sv.rank() == 2 && sv.0[0] == 1));
        if !ok {
            return Err(mismatch("broadcast_add", &sm, &sv));
        }
        let vv = self.value(v);
        let out: Vec<T> = self.value(m).iter().enumerate().map(|(i, &x)| x + vv[i % d]).collect();
        let rg = self.rg(&[m, v]);
        Ok(self.push(sm, out, Op::BroadcastAdd(m, v), rg))
    }

    fn map(&mut self, a: NodeId, op: Op<T>, f: impl Fn(T) -> T) -> NodeId {
        let out: Vec<T> = self.value(a).iter().map(|&x| f(x)).collect();
        let rg = self.rg(&[a]);
        let shape = self.shape(a).clone();
        self.push(shape, out, op, rg)
    }

    pub fn scale(&mut self, a: NodeId, c: T) -> NodeId {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: T) -> NodeId {
        self.map(a, Op::AddScalar(a), |x| x + c)
    }

    /// `1 - a`.
    pub fn one_minus(&mut self, a: NodeId) -> NodeId {
        let neg = self.scale(a, -T::one());
        self.add_scalar(neg, T::one())
    }

    pub fn abs(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Abs(a), |x| x.abs())
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.map(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    /// Softmax along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let shape = self.shape(a).clone();
        if axis >= shape.rank() {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                left: shape.0,
                right: vec![axis],
            });
        }
        let (outer, len, inner) = shape.split_at_axis(axis);
        let x = self.value(a);
        let mut out = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| o * len * inner + j * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..len {
                    mx = mx.max(x[at(j)]);
                }
                let mut total = T::zero();
                for j in 0..len {
                    let e = (x[at(j)] - mx).exp();
                    out[at(j)] = e;
                    total = total + e;
                }
                for j in 0..len {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, Op::Softmax(a, axis), rg))
    }

    /// Sum over `axis` (removed from the shape), or over everything into a
    /// scalar when `axis` is `None`.
    pub fn sum(&mut self, a: NodeId, axis: Option<usize>) -> Result<NodeId> {
        let shape = self.shape(a).clone();
        let rg = self.rg(&[a]);
        match axis {
            None => {
                let total = self.value(a).iter().copied().sum();
                Ok(self.push(Shape::scalar(), vec![total], Op::Sum(a, None), rg))
            }
            Some(ax) => {
                if ax >= shape.rank() {
                    return Err(Error::ShapeMismatch {
                        op: "sum",
                        left: shape.0,
                        right: vec![ax],
                    });
                }
                let (outer, len, inner) = shape.split_at_axis(ax);
                let x = self.value(a);
                let mut out = vec![T::zero(); outer * inner];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            out[o * inner + i] = out[o * inner + i] + x[o * len * inner + j * inner + i];
                        }
                    }
                }
                let mut dims = shape.0.clone();
                dims.remove(ax);
                Ok(self.push(Shape(dims), out, Op::Sum(a, Some(ax)), rg))
            }
        }
    }

    /// Mean over all elements.
    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let n: T = lit(x.len() as f64);
        let total: T = x.iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Shape::scalar(), vec![total / n], Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: NodeId, shape: impl Into<Shape>) -> Result<NodeId> {
        let shape = shape.into();
        if shape.numel() != self.shape(a).numel() {
            return Err(mismatch("reshape", self.shape(a), &shape));
        }
        let v = self.value(a).to_vec();
        let rg = self.rg(&[a]);
        Ok(self.push(shape, v, Op::Reshape(a), rg))
    }

    /// Concatenation along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, a: NodeId, b: NodeId, axis: usize) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a).clone(), self.shape(b).clone());
        let compatible = sa.rank() == sb.rank()
            && axis < sa.rank()
            && sa
                .0
                .iter()
                .zip(&sb.0)
                .enumerate()
                .all(|(i, (x, y))| i == axis || x == y);
        if !compatible {
            return Err(mismatch("concat", &sa, &sb));
        }
        let outer: usize = sa.0[..axis].iter().product();
        let ia = sa.numel() / outer.max(1);
        let ib = sb.numel() / outer.max(1);
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(va.len() + vb.len());
        for o in 0..outer {
            out.extend_from_slice(&va[o * ia..(o + 1) * ia]);
            out.extend_from_slice(&vb[o * ib..(o + 1) * ib]);
        }
        let mut dims = sa.0.clone();
        dims[axis] += sb.0[axis];
        let rg = self.rg(&[a, b]);
        Ok(self.push(Shape(dims), out, Op::Concat(a, b, axis), rg))
    }

    /// Rows `start..end` along the leading axis.
    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let s = self.shape(a).clone();
        if s.rank() == 0 || start > end || end > s.0[0] {
            return Err(Error::ShapeMismatch {
                op: "slice_rows",
                left: s.0,
                right: vec![start, end],
            });
        }
        let row = s.numel() / s.0[0].max(1);
        let v = self.value(a)[start * row..end * row].to_vec();
        let mut dims = s.0.clone();
        dims[0] = end - start;
        let rg = self.rg(&[a]);
        Ok(self.push(Shape(dims), v, Op::SliceRows(a, start), rg))
    }

    /// Repeats every leading-axis row `times` times consecutively:
    /// `[b, ..] -> [b * times, ..]`.
    pub fn repeat_rows(&mut self, a: NodeId, times: usize) -> Result<NodeId> {
        let s = self.shape(a).clone();
        if s.rank() == 0 || times == 0 {
            return Err(Error::ShapeMismatch {
                op: "repeat_rows",
                left: s.0,
                right: vec![times],
            });
        }
        let row = s.numel() / s.0[0].max(1);
        let x = self.value(a);
        let mut out = Vec::with_capacity(x.len() * times);
        for r in 0..s.0[0] {
            for _ in 0..times {
                out.extend_from_slice(&x[r * row..(r + 1) * row]);
            }
        }
        let mut dims = s.0.clone();
        dims[0] *= times;
        let rg = self.rg(&[a]);
        Ok(self.push(Shape(dims), out, Op::RepeatRows(a, times), rg))
    }

    /// Row lookup `table[ids[i]]` producing `[ids.len(), cols]`.
    pub fn gather_rows(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let (rows, cols) = self.matrix(table, "gather_rows")?;
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            if id >= rows {
                return Err(Error::IdOutOfRange { id, size: rows });
            }
            out.extend_from_slice(&t[id * cols..(id + 1) * cols]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            Shape::new(&[ids.len(), cols]),
            out,
            Op::GatherRows(table, ids.to_vec()),
            rg,
        ))
    }

    /// Row `r` of the result is row `r` of `a` where `mask[r]`, else of `b`.
    /// Copies bits exactly.
    pub fn select_rows(&mut self, mask: &[bool], a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("select_rows", a, b)?;
        let s = self.shape(a).clone();
        if s.rank() == 0 || s.0[0] != mask.len() {
            return Err(Error::ShapeMismatch {
                op: "select_rows",
                left: s.0,
                right: vec![mask.len()],
            });
        }
        let row = s.numel() / s.0[0].max(1);
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(va.len());
        for (r, &m) in mask.iter().enumerate() {
            let src = if m { va } else { vb };
            out.extend_from_slice(&src[r * row..(r + 1) * row]);
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(s, out, Op::SelectRows(mask.to_vec(), a, b), rg))
    }

    /// Inverted dropout: in training each unit is zeroed with probability
    /// `rate` and survivors are scaled by `1/(1-rate)`. Evaluation mode and
    /// `rate == 0` return `a` itself.
    pub fn dropout(&mut self, a: NodeId, rate: f64, training: bool, rng: &mut RngStream) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep: T = lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.shape(a).numel())
            .map(|_| if rng.uniform() < rate { T::zero() } else { keep })
            .collect();
        let out: Vec<T> = self.value(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let rg = self.rg(&[a]);
        let shape = self.shape(a).clone();
        Ok(self.push(shape, out, Op::Dropout(a, mask), rg))
    }

    /// Mean binary cross-entropy of probabilities `p` against 0/1 `labels`,
    /// with `p` clamped to `[eps, 1 - eps]`. The gradient is evaluated at the
    /// clamped probability so saturated mistakes still push back.
    pub fn bce_loss(&mut self, p: NodeId, labels: &[T]) -> Result<NodeId> {
        if self.shape(p).numel() != labels.len() {
            return Err(Error::ShapeMismatch {
                op: "bce_loss",
                left: self.shape(p).0.clone(),
                right: vec![labels.len()],
            });
        }
        let eps: T = lit(BCE_EPS);
        let hi = T::one() - eps;
        let n: T = lit(labels.len() as f64);
        let total: T = self
            .value(p)
            .iter()
            .zip(labels)
            .map(|(&pv, &y)| {
                let pc = pv.max(eps).min(hi);
                -(y * pc.ln() + (T::one() - y) * (T::one() - pc).ln())
            })
            .sum();
        let rg = self.rg(&[p]);
        Ok(self.push(Shape::scalar(), vec![total / n], Op::Bce(p, labels.to_vec()), rg))
    }

    /// Reverse sweep from a one-element `loss` node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        if self.shape(loss).numel() != 1 {
            return Err(Error::ContractViolation(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        let params = self.param_nodes.iter().map(|(&p, &n)| (p, n)).collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let out = self.value(NodeId(i));
        // Lazily allocated accumulator for a parent that needs gradients.
        macro_rules! acc {
            ($id:expr) => {{
                let id: NodeId = $id;
                if self.nodes[id.0].requires_grad {
                    let n = self.shape(id).numel();
                    Some(grads[id.0].get_or_insert_with(|| vec![T::zero(); n]))
                } else {
                    None
                }
            }};
        }
        match &node.op {
            Op::Constant | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a).0[0], self.shape(*a).0[1]);
                let n = self.shape(*b).0[1];
                if let Some(ga) = acc!(*a) {
                    mm_nt(g, self.value(*b), m, n, k, ga);
                }
                if let Some(gb) = acc!(*b) {
                    mm_tn(self.value(*a), g, m, k, n, gb);
                }
            }
            Op::MatMulT(a, b) => {
                let (m, k) = (self.shape(*a).0[0], self.shape(*a).0[1]);
                let n = self.shape(*b).0[0];
                if let Some(ga) = acc!(*a) {
                    let mut tmp = vec![T::zero(); m * k];
                    mm(g, self.value(*b), m, n, k, &mut tmp);
                    for (x, t) in ga.iter_mut().zip(tmp) {
                        *x = *x + t;
                    }
                }
                if let Some(gb) = acc!(*b) {
                    mm_tn(g, self.value(*a), m, n, k, gb);
                }
            }
            Op::Bmm(a, c) => {
                let sa = &self.shape(*a).0;
                let (bt, m, k) = (sa[0], sa[1], sa[2]);
                let n = self.shape(*c).0[2];
                if let Some(ga) = acc!(*a) {
                    let cv = self.value(*c);
                    for b in 0..bt {
                        mm_nt(
                            &g[b * m * n..(b + 1) * m * n],
                            &cv[b * k * n..(b + 1) * k * n],
                            m,
                            n,
                            k,
                            &mut ga[b * m * k..(b + 1) * m * k],
                        );
                    }
                }
                if let Some(gc) = acc!(*c) {
                    let av = self.value(*a);
                    for b in 0..bt {
                        mm_tn(
                            &av[b * m * k..(b + 1) * m * k],
                            &g[b * m * n..(b + 1) * m * n],
                            m,
                            k,
                            n,
                            &mut gc[b * k * n..(b + 1) * k * n],
                        );
                    }
                }
            }
            Op::Add(a, b) => {
                for (id, sign) in [(*a, T::one()), (*b, T::one())] {
                    if let Some(ga) = acc!(id) {
                        for (x, &gv) in ga.iter_mut().zip(g) {
                            *x = *x + sign * gv;
                        }
                    }
                }
            }
            Op::Sub(a, b) => {
                for (id, sign) in [(*a, T::one()), (*b, -T::one())] {
                    if let Some(ga) = acc!(id) {
                        for (x, &gv) in ga.iter_mut().zip(g) {
                            *x = *x + sign * gv;
                        }
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = acc!(*a) {
                    for ((x, &gv), &bv) in ga.iter_mut().zip(g).zip(self.value(*b)) {
                        *x = *x + gv * bv;
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for ((x, &gv), &av) in gb.iter_mut().zip(g).zip(self.value(*a)) {
                        *x = *x + gv * av;
                    }
                }
            }
            Op::BroadcastAdd(m, v) => {
                if let Some(gm) = acc!(*m) {
                    for (x, &gv) in gm.iter_mut().zip(g) {
                        *x = *x + gv;
                    }
                }
                if let Some(gv_acc) = acc!(*v) {
                    let d = gv_acc.len();
                    for (idx, &gv) in g.iter().enumerate() {
                        gv_acc[idx % d] = gv_acc[idx % d] + gv;
                    }
                }
            }
            Op::Scale(a, c) => {
                if let Some(ga) = acc!(*a) {
                    for (x, &gv) in ga.iter_mut().zip(g) {
                        *x = *x + gv * *c;
                    }
                }
            }
            Op::AddScalar(a) | Op::Reshape(a) => {
                if let Some(ga) = acc!(*a) {
                    for (x, &gv) in ga.iter_mut().zip(g) {
                        *x = *x + gv;
                    }
                }
            }
            Op::Abs(a) => {
                if let Some(ga) = acc!(*a) {
                    for ((x, &gv), &av) in ga.iter_mut().zip(g).zip(self.value(*a)) {
                        let s = if av > T::zero() {
                            T::one()
                        } else if av < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        *x = *x + gv * s;
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(ga) = acc!(*a) {
                    for ((x, &gv), &y) in ga.iter_mut().zip(g).zip(out) {
                        *x = *x + gv * y * (T::one() - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(ga) = acc!(*a) {
                    for ((x, &gv), &y) in ga.iter_mut().zip(g).zip(out) {
                        *x = *x + gv * (T::one() - y * y);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = acc!(*a) {
                    for ((x, &gv), &av) in ga.iter_mut().zip(g).zip(self.value(*a)) {
                        if av > T::zero() {
                            *x = *x + gv;
                        }
                    }
                }
            }
            Op::Softmax(a, axis) => {
                if let Some(ga) = acc!(*a) {
                    let (outer, len, inner) = node.shape.split_at_axis(*axis);
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| o * len * inner + j * inner + i;
                            let mut dot = T::zero();
                            for j in 0..len {
                                dot = dot + g[at(j)] * out[at(j)];
                            }
                            for j in 0..len {
                                ga[at(j)] = ga[at(j)] + out[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                }
            }
            Op::Sum(a, axis) => {
                let sa = self.shape(*a).clone();
                if let Some(ga) = acc!(*a) {
                    match axis {
                        None => {
                            for x in ga.iter_mut() {
                                *x = *x + g[0];
                            }
                        }
                        Some(ax) => {
                            let (outer, len, inner) = sa.split_at_axis(*ax);
                            for o in 0..outer {
                                for j in 0..len {
                                    for i in 0..inner {
                                        let idx = o * len * inner + j * inner + i;
                                        ga[idx] = ga[idx] + g[o * inner + i];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            Op::Mean(a) => {
                if let Some(ga) = acc!(*a) {
                    let n: T = lit(ga.len() as f64);
                    for x in ga.iter_mut() {
                        *x = *x + g[0] / n;
                    }
                }
            }
            Op::Concat(a, b, axis) => {
                let (sa, sb) = (self.shape(*a).clone(), self.shape(*b).clone());
                let outer: usize = sa.0[..*axis].iter().product();
                let ia = sa.numel() / outer.max(1);
                let ib = sb.numel() / outer.max(1);
                if let Some(ga) = acc!(*a) {
                    for o in 0..outer {
                        let src = &g[o * (ia + ib)..o * (ia + ib) + ia];
                        for (x, &gv) in ga[o * ia..(o + 1) * ia].iter_mut().zip(src) {
                            *x = *x + gv;
                        }
                    }
                }
                if let Some(gb) = acc!(*b) {
                    for o in 0..outer {
                        let src = &g[o * (ia + ib) + ia..(o + 1) * (ia + ib)];
                        for (x, &gv) in gb[o * ib..(o + 1) * ib].iter_mut().zip(src) {
                            *x = *x + gv;
                        }
                    }
                }
            }
            Op::SliceRows(a, start) => {
                let sa = self.shape(*a).clone();
                let row = sa.numel() / sa.0[0].max(1);
                if let Some(ga) = acc!(*a) {
                    for (x, &gv) in ga[start * row..start * row + g.len()].iter_mut().zip(g) {
                        *x = *x + gv;
                    }
                }
            }
            Op::RepeatRows(a, times) => {
                let sa = self.shape(*a).clone();
                let row = sa.numel() / sa.0[0].max(1);
                if let Some(ga) = acc!(*a) {
                    for r in 0..sa.0[0] {
                        for t in 0..*times {
                            let src = &g[(r * times + t) * row..(r * times + t + 1) * row];
                            for (x, &gv) in ga[r * row..(r + 1) * row].iter_mut().zip(src) {
                                *x = *x + gv;
                            }
                        }
                    }
                }
            }
            Op::GatherRows(table, ids) => {
                let cols = self.shape(*table).0[1];
                if let Some(gt) = acc!(*table) {
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &g[r * cols..(r + 1) * cols];
                        for (x, &gv) in gt[id * cols..(id + 1) * cols].iter_mut().zip(src) {
                            *x = *x + gv;
                        }
                    }
                }
            }
            Op::SelectRows(mask, a, b) => {
                let row = node.shape.numel() / mask.len().max(1);
                for (id, want) in [(*a, true), (*b, false)] {
                    if let Some(gx) = acc!(id) {
                        for (r, &m) in mask.iter().enumerate() {
                            if m == want {
                                for (x, &gv) in gx[r * row..(r + 1) * row].iter_mut().zip(&g[r * row..(r + 1) * row]) {
                                    *x = *x + gv;
                                }
                            }
                        }
                    }
                }
            }
            Op::Dropout(a, mask) => {
                if let Some(ga) = acc!(*a) {
                    for ((x, &gv), &m) in ga.iter_mut().zip(g).zip(mask) {
                        *x = *x + gv * m;
                    }
                }
            }
            Op::Bce(p, labels) => {
                if let Some(gp) = acc!(*p) {
                    let eps: T = lit(BCE_EPS);
                    let hi = T::one() - eps;
                    let n: T = lit(labels.len() as f64);
                    for ((x, &pv), &y) in gp.iter_mut().zip(self.value(*p)).zip(labels) {
                        let pc = pv.max(eps).min(hi);
                        let d = (-y / pc + (T::one() - y) / (T::one() - pc)) / n;
                        *x = *x + g[0] * d;
                    }
                }
            }
        }
    }
}

/// Result of [`Graph::backward`]: `∂loss/∂node` for every node that requires
/// gradients and was reached.
#[derive(Debug)]
pub struct Gradients<T> {
    nodes: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, NodeId)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn node(&self, id: NodeId) -> Option<&[T]> {
        self.nodes.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .and_then(|(_, n)| self.node(*n))
    }

    /// Gradients of every parameter used in the graph.
    pub fn param_grads(&self) -> impl Iterator<Item = (ParamId, &[T])> {
        self.params
            .iter()
            .filter_map(|(p, n)| self.nodes[n.0].as_deref().map(|g| (*p, g)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[(&str, Vec<usize>, Vec<f64>)]) -> (ParamStore<f64>, Vec<ParamId>) {
        let mut s = ParamStore::new();
        let ids = values
            .iter()
            .map(|(n, sh, v)| s.add(n, Shape(sh.clone()), v.clone()).unwrap())
            .collect();
        (s, ids)
    }

    #[test]
    fn pointwise_mul_by_ones_is_identity() {
        let (s, ids) = store_with(&[("x", vec![3], vec![1.5, -2.0, 0.25])]);
        let mut g = Graph::new(&s);
        let x = g.param(ids[0]);
        let ones = g.constant([3], vec![1.0; 3]).unwrap();
        let y = g.pointwise_mul(x, ones).unwrap();
        assert_eq!(g.value(y), &[1.5, -2.0, 0.25]);
    }

    #[test]
    fn identity_matmul() {
        let (s, _) = store_with(&[]);
        let mut g = Graph::new(&s);
        let eye = g.constant([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let a = g.constant([2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = g.matmul(eye, a).unwrap();
        assert_eq!(g.value(p), g.value(a));
    }

    #[test]
    fn broadcast_add_rows() {
        let (s, _) = store_with(&[]);
        let mut g = Graph::new(&s);
        let mut rng = RngStream::new(11);
        let mv: Vec<f64> = (0..6).map(|_| rng.normal()).collect();
        let vv: Vec<f64> = (0..2).map(|_| rng.normal()).collect();
        let m = g.constant([3, 2], mv.clone()).unwrap();
        let v = g.constant([2], vv.clone()).unwrap();
        let out = g.broadcast_add(m, v).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                assert_eq!(g.value(out)[r * 2 + c], mv[r * 2 + c] + vv[c]);
            }
        }
    }

    #[test]
    fn shape_mismatch_reports_both_shapes() {
        let (s, _) = store_with(&[]);
        let mut g = Graph::new(&s);
        let a = g.constant([2, 3], vec![0.0; 6]).unwrap();
        let b = g.constant([2, 3], vec![0.0; 6]).unwrap();
        let err = g.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn activations_closed_forms() {
        let (s, ids) = store_with(&[("x", vec![1], vec![0.0])]);
        let mut g = Graph::new(&s);
        let x = g.param(ids[0]);
        let sg = g.sigmoid(x);
        assert_eq!(g.scalar(sg), 0.5);
        let t = g.tanh(x);
        let grads = g.backward(t).unwrap();
        assert_eq!(grads.param(ids[0]).unwrap(), &[1.0]);

        let r = 5;
        let logits = g.constant([1, r], vec![0.3; r]).unwrap();
        let sm = g.softmax(logits, 1).unwrap();
        for &p in g.value(sm) {
            assert!((p - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let s = ParamStore::<f32>::new();
        let mut g = Graph::new(&s);
        let logits = g.constant([1, 3], vec![1000.0, 1000.0, -1000.0]).unwrap();
        let sm = g.softmax(logits, 1).unwrap();
        assert_eq!(g.value(sm), &[0.5, 0.5, 0.0]);
    }

    #[test]
    fn bce_hand_values() {
        let (s, _) = store_with(&[]);
        let mut g = Graph::new(&s);
        let p = g.constant([1], vec![0.5]).unwrap();
        let l1 = g.bce_loss(p, &[1.0]).unwrap();
        let l0 = g.bce_loss(p, &[0.0]).unwrap();
        assert!((g.scalar(l1) - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((g.scalar(l0) - std::f64::consts::LN_2).abs() < 1e-12);
        let one = g.constant([1], vec![1.0]).unwrap();
        let perfect = g.bce_loss(one, &[1.0]).unwrap();
        assert!(g.scalar(perfect) < 1e-6);
    }

    #[test]
    fn backward_of_sum_is_ones_and_product_rule() {
        let (s, ids) = store_with(&[("x", vec![3], vec![1.0, 2.0, 3.0]), ("y", vec![3], vec![4.0, 5.0, 6.0])]);
        let mut g = Graph::new(&s);
        let (x, y) = (g.param(ids[0]), g.param(ids[1]));
        let total = g.sum(x, None).unwrap();
        let grads = g.backward(total).unwrap();
        assert_eq!(grads.param(ids[0]).unwrap(), &[1.0, 1.0, 1.0]);

        let xy = g.pointwise_mul(x, y).unwrap();
        let l = g.sum(xy, None).unwrap();
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.param(ids[0]).unwrap(), &[4.0, 5.0, 6.0]);
        assert_eq!(grads.param(ids[1]).unwrap(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let (s, ids) = store_with(&[("x", vec![2], vec![1.0, 2.0])]);
        let mut g = Graph::new(&s);
        let x = g.param(ids[0]);
        let y = g.tanh(x);
        assert!(matches!(g.backward(y), Err(Error::ContractViolation(_))));
    }

    #[test]
    fn dropout_contracts() {
        let (s, _) = store_with(&[]);
        let mut g = Graph::new(&s);
        let mut rng = RngStream::new(5);
        let x = g.constant([4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(g.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(g.dropout(x, 0.7, false, &mut rng).unwrap(), x);
        assert!(matches!(g.dropout(x, 1.0, true, &mut rng), Err(Error::Config(_))));

        let n = 10_000;
        let ones = g.constant([n], vec![1.0; n]).unwrap();
        let d = g.dropout(ones, 0.5, true, &mut rng).unwrap();
        let vals = g.value(d);
        let zeroed = vals.iter().filter(|v| **v == 0.0).count() as f64 / n as f64;
        let mean = vals.iter().sum::<f64>() / n as f64;
        assert!((zeroed - 0.5).abs() <= 0.02, "zeroed {zeroed}");
        assert!((mean - 1.0).abs() <= 0.03, "mean {mean}");
    }

    #[test]
    fn select_rows_copies_exact_bits() {
        let (s, _) = store_with(&[]);
        let mut g = Graph::new(&s);
        let a = g.constant([2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = g.constant([2, 2], vec![f64::NAN, 6.0, 7.0, 8.0]).unwrap();
        let c = g.select_rows(&[true, false], a, b).unwrap();
        assert_eq!(g.value(c), &[1.0, 2.0, 7.0, 8.0]);
    }

    #[test]
    fn param_node_is_shared() {
        let (s, ids) = store_with(&[("w", vec![2], vec![1.0, 1.0])]);
        let mut g = Graph::new(&s);
        assert_eq!(g.param(ids[0]), g.param(ids[0]));
    }
}
