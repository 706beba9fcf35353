use std::cell::RefCell;
use std::collections::HashMap;

use super::{numel, ParamId, ParamStore, Result, Tensor, TensorError};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Maximum(usize, usize),
    Minimum(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Sigmoid(usize),
    Relu(usize),
    Exp(usize),
    Ln(usize),
    Softplus(usize),
    Abs(usize),
    Powf(usize, f64),
    Sqrt(usize),
    Logit(usize, f64),
    MatMul {
        a: usize,
        b: usize,
        ta: bool,
        tb: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose(usize),
    Sum(usize),
    SumAxis(usize, usize),
    Softmax(usize, usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Concat(Vec<usize>, usize),
    Slice {
        a: usize,
        axis: usize,
        start: usize,
    },
    Gather(usize, Vec<usize>),
    Reshape(usize),
    BroadcastTo(usize),
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Records operations for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every node's inputs precede it
/// and [`Tape::backward`] can walk the list in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let nodes = self.tape.nodes.borrow();
        let node = &nodes[self.id];
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &node.shape)
            .finish()
    }
}

/// Gradients produced by one backward sweep, indexed by tape node.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, shape: Vec<usize>, data: Vec<f64>, op: Op, needs_grad: bool) -> Var<'_> {
        debug_assert_eq!(numel(&shape), data.len());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            shape,
            data,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Pushes a leaf; it receives a gradient iff `t.requires_grad()`.
    pub fn leaf(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Pushes a leaf that never receives a gradient.
    pub fn constant(&self, t: &Tensor) -> Var<'_> {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, false)
    }

    pub fn constant_from(&self, shape: &[usize], data: Vec<f64>) -> Result<Var<'_>> {
        if shape.contains(&0) || numel(shape) != data.len() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected: numel(shape),
                actual: data.len(),
            });
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.push(vec![1], vec![v], Op::Leaf, false)
    }

    /// Leaf for a stored parameter. Repeated calls with the same id return the
    /// same node, so every use of a parameter on this tape shares one gradient.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let var = self.leaf(store.get(id));
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    /// Node ids of parameters pushed so far.
    pub fn param_node(&self, id: ParamId) -> Option<usize> {
        self.params.borrow().get(&id).copied()
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].data.len() != 1 {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: nodes[loss.id].shape.clone(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.id + 1];
        grads[loss.id] = Some(vec![1.0]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.needs_grad {
                grads[id] = None;
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            backprop(&nodes, id, &g, &mut grads);
        }
        Ok(Gradients { grads })
    }

    /// Backward sweep that accumulates into the `grad` buffers of `store`.
    pub fn backward_into(&self, loss: Var<'_>, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        for (&pid, &node) in self.params.borrow().iter() {
            if let Some(Some(g)) = grads.grads.get(node) {
                store.get_mut(pid).accumulate_grad(g);
            }
        }
        Ok(())
    }
}

fn slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], id: usize) -> &'a mut Vec<f64> {
    grads[id].get_or_insert_with(|| vec![0.0; nodes[id].data.len()])
}

/// Per-output-element index into an operand that broadcasts to `out`.
fn broadcast_map(out: &[usize], inp: &[usize]) -> Option<Vec<usize>> {
    if out == inp {
        return None;
    }
    let rank = out.len();
    let offset = rank - inp.len();
    let mut in_strides = vec![0usize; rank];
    let mut s = 1;
    for d in (0..inp.len()).rev() {
        if inp[d] != 1 {
            in_strides[d + offset] = s;
        }
        s *= inp[d];
    }
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut cur = 0usize;
    for _ in 0..total {
        map.push(cur);
        for d in (0..rank).rev() {
            idx[d] += 1;
            cur += in_strides[d];
            if idx[d] < out[d] {
                break;
            }
            cur -= in_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    Some(map)
}

fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(TensorError::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

#[inline]
fn at(map: &Option<Vec<usize>>, i: usize) -> usize {
    match map {
        Some(m) => m[i],
        None => i,
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover every strided element addressed for the given
    // extents, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn op_strides(transposed: bool, rows: usize, cols: usize) -> (usize, usize) {
    // strides of op(X) where op(X) is rows x cols
    if transposed {
        (1, rows)
    } else {
        (cols, 1)
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn backprop(nodes: &[Node], id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let node = &nodes[id];
    let y = &node.data;
    let ng = |p: usize| nodes[p].needs_grad;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            if ng(*a) {
                let map = broadcast_map(&node.shape, &nodes[*a].shape);
                let ga = slot(grads, nodes, *a);
                for (i, gi) in g.iter().enumerate() {
                    ga[at(&map, i)] += gi;
                }
            }
            if ng(*b) {
                let map = broadcast_map(&node.shape, &nodes[*b].shape);
                let gb = slot(grads, nodes, *b);
                for (i, gi) in g.iter().enumerate() {
                    gb[at(&map, i)] += sign * gi;
                }
            }
        }
        Op::Mul(a, b) | Op::Div(a, b) | Op::Maximum(a, b) | Op::Minimum(a, b) => {
            let ma = broadcast_map(&node.shape, &nodes[*a].shape);
            let mb = broadcast_map(&node.shape, &nodes[*b].shape);
            let (da, db) = (&nodes[*a].data, &nodes[*b].data);
            let local = |i: usize| -> (f64, f64) {
                let (x, z) = (da[at(&ma, i)], db[at(&mb, i)]);
                match node.op {
                    Op::Mul(..) => (z, x),
                    Op::Div(..) => (1.0 / z, -x / (z * z)),
                    Op::Maximum(..) => {
                        if x >= z {
                            (1.0, 0.0)
                        } else {
                            (0.0, 1.0)
                        }
                    }
                    _ => {
                        if x <= z {
                            (1.0, 0.0)
                        } else {
                            (0.0, 1.0)
                        }
                    }
                }
            };
            if ng(*a) {
                let mut acc = vec![0.0; da.len()];
                for (i, gi) in g.iter().enumerate() {
                    acc[at(&ma, i)] += gi * local(i).0;
                }
                slot(grads, nodes, *a).iter_mut().zip(acc).for_each(|(s, v)| *s += v);
            }
            if ng(*b) {
                let mut acc = vec![0.0; db.len()];
                for (i, gi) in g.iter().enumerate() {
                    acc[at(&mb, i)] += gi * local(i).1;
                }
                slot(grads, nodes, *b).iter_mut().zip(acc).for_each(|(s, v)| *s += v);
            }
        }
        Op::Neg(a) => unary(nodes, grads, *a, g, |_, _| -1.0),
        Op::Scale(a, s) => {
            let s = *s;
            unary(nodes, grads, *a, g, |_, _| s)
        }
        Op::AddScalar(a) => unary(nodes, grads, *a, g, |_, _| 1.0),
        Op::Sigmoid(a) => unary(nodes, grads, *a, g, |i, _| y[i] * (1.0 - y[i])),
        Op::Relu(a) => unary(nodes, grads, *a, g, |_, x| if x > 0.0 { 1.0 } else { 0.0 }),
        Op::Exp(a) => unary(nodes, grads, *a, g, |i, _| y[i]),
        Op::Ln(a) => unary(nodes, grads, *a, g, |_, x| 1.0 / x),
        Op::Softplus(a) => unary(nodes, grads, *a, g, |_, x| sigmoid(x)),
        Op::Abs(a) => unary(nodes, grads, *a, g, |_, x| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        }),
        Op::Powf(a, p) => {
            let p = *p;
            unary(nodes, grads, *a, g, |_, x| p * x.powf(p - 1.0))
        }
        Op::Sqrt(a) => unary(nodes, grads, *a, g, |i, _| 0.5 / y[i]),
        Op::Logit(a, eps) => {
            let eps = *eps;
            unary(nodes, grads, *a, g, |_, x| {
                if x < eps || x > 1.0 - eps {
                    0.0
                } else {
                    1.0 / (x * (1.0 - x))
                }
            })
        }
        Op::MatMul {
            a,
            b,
            ta,
            tb,
            m,
            k,
            n,
        } => {
            let (m, k, n) = (*m, *k, *n);
            let sa = op_strides(*ta, m, k);
            let sb = op_strides(*tb, k, n);
            if ng(*a) {
                let bdata = &nodes[*b].data;
                let ga = slot(grads, nodes, *a);
                gemm(m, n, k, g, (n, 1), bdata, (sb.1, sb.0), 1.0, ga, sa);
            }
            if ng(*b) {
                let adata = &nodes[*a].data;
                let gb = slot(grads, nodes, *b);
                gemm(k, m, n, adata, (sa.1, sa.0), g, (n, 1), 1.0, gb, sb);
            }
        }
        Op::Transpose(a) => {
            if ng(*a) {
                let (r, c) = (node.shape[0], node.shape[1]);
                let ga = slot(grads, nodes, *a);
                for i in 0..r {
                    for j in 0..c {
                        ga[j * r + i] += g[i * c + j];
                    }
                }
            }
        }
        Op::Sum(a) => {
            if ng(*a) {
                let ga = slot(grads, nodes, *a);
                ga.iter_mut().for_each(|v| *v += g[0]);
            }
        }
        Op::SumAxis(a, axis) => {
            if ng(*a) {
                let (outer, len, inner) = split_axis(&nodes[*a].shape, *axis);
                let ga = slot(grads, nodes, *a);
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            ga[(o * len + j) * inner + i] += g[o * inner + i];
                        }
                    }
                }
            }
        }
        Op::Softmax(a, axis) => {
            if ng(*a) {
                let (outer, len, inner) = split_axis(&node.shape, *axis);
                let ga = slot(grads, nodes, *a);
                for o in 0..outer {
                    for i in 0..inner {
                        let idx = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[idx(j)] * y[idx(j)]).sum();
                        for j in 0..len {
                            ga[idx(j)] += y[idx(j)] * (g[idx(j)] - dot);
                        }
                    }
                }
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            rstd,
        } => {
            let n = *node.shape.last().unwrap();
            let rows = node.data.len() / n;
            let gw = nodes[*gain].data.clone();
            if ng(*gain) {
                let gg = slot(grads, nodes, *gain);
                for r in 0..rows {
                    for j in 0..n {
                        gg[j] += g[r * n + j] * xhat[r * n + j];
                    }
                }
            }
            if ng(*bias) {
                let gb = slot(grads, nodes, *bias);
                for r in 0..rows {
                    for j in 0..n {
                        gb[j] += g[r * n + j];
                    }
                }
            }
            if ng(*x) {
                let gx = slot(grads, nodes, *x);
                let mut dxhat = vec![0.0; n];
                for r in 0..rows {
                    let base = r * n;
                    for j in 0..n {
                        dxhat[j] = g[base + j] * gw[j];
                    }
                    let mean_d: f64 = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dx: f64 =
                        (0..n).map(|j| dxhat[j] * xhat[base + j]).sum::<f64>() / n as f64;
                    for j in 0..n {
                        gx[base + j] += rstd[r] * (dxhat[j] - mean_d - xhat[base + j] * mean_dx);
                    }
                }
            }
        }
        Op::Concat(parts, axis) => {
            let (outer, _, inner) = split_axis(&node.shape, *axis);
            let total_len = node.shape[*axis];
            let mut offset = 0;
            for &p in parts {
                let len = nodes[p].shape[*axis];
                if ng(p) {
                    let gp = slot(grads, nodes, p);
                    for o in 0..outer {
                        let src = (o * total_len + offset) * inner;
                        let dst = o * len * inner;
                        for t in 0..len * inner {
                            gp[dst + t] += g[src + t];
                        }
                    }
                }
                offset += len;
            }
        }
        Op::Slice { a, axis, start } => {
            if ng(*a) {
                let (outer, len, inner) = split_axis(&node.shape, *axis);
                let full = nodes[*a].shape[*axis];
                let ga = slot(grads, nodes, *a);
                for o in 0..outer {
                    let dst = (o * full + start) * inner;
                    let src = o * len * inner;
                    for t in 0..len * inner {
                        ga[dst + t] += g[src + t];
                    }
                }
            }
        }
        Op::Gather(a, rows) => {
            if ng(*a) {
                let width = node.data.len() / rows.len();
                let ga = slot(grads, nodes, *a);
                for (r, &src) in rows.iter().enumerate() {
                    for t in 0..width {
                        ga[src * width + t] += g[r * width + t];
                    }
                }
            }
        }
        Op::Reshape(a) => {
            if ng(*a) {
                let ga = slot(grads, nodes, *a);
                ga.iter_mut().zip(g).for_each(|(s, v)| *s += v);
            }
        }
        Op::BroadcastTo(a) => {
            if ng(*a) {
                let map = broadcast_map(&node.shape, &nodes[*a].shape);
                let ga = slot(grads, nodes, *a);
                for (i, gi) in g.iter().enumerate() {
                    ga[at(&map, i)] += gi;
                }
            }
        }
    }
}

fn unary(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    a: usize,
    g: &[f64],
    d: impl Fn(usize, f64) -> f64,
) {
    if !nodes[a].needs_grad {
        return;
    }
    let x = &nodes[a].data;
    let ga = slot(grads, nodes, a);
    for i in 0..g.len() {
        ga[i] += g[i] * d(i, x[i]);
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].data.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.tape.nodes.borrow()[self.id].data.clone()
    }

    pub fn value(&self) -> Tensor {
        let nodes = self.tape.nodes.borrow();
        Tensor::new(&nodes[self.id].shape, nodes[self.id].data.clone()).unwrap()
    }

    pub fn item(&self) -> Result<f64> {
        self.value().item()
    }

    /// Reads element data without copying.
    pub fn with_data<R>(&self, f: impl FnOnce(&[f64]) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].data)
    }

    pub fn needs_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].needs_grad
    }

    /// Same value, cut from the graph.
    pub fn detach(&self) -> Var<'t> {
        let (shape, data) = {
            let nodes = self.tape.nodes.borrow();
            (nodes[self.id].shape.clone(), nodes[self.id].data.clone())
        };
        self.tape.push(shape, data, Op::Leaf, false)
    }

    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'t> {
        let (shape, data, ng) = {
            let nodes = self.tape.nodes.borrow();
            let n = &nodes[self.id];
            (n.shape.clone(), n.data.iter().map(|&x| f(x)).collect(), n.needs_grad)
        };
        self.tape.push(shape, data, op, ng)
    }

    fn zip(
        &self,
        other: Var<'t>,
        name: &'static str,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var<'t>> {
        let (shape, data, ng) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let shape = broadcast_shape(name, &a.shape, &b.shape)?;
            let ma = broadcast_map(&shape, &a.shape);
            let mb = broadcast_map(&shape, &b.shape);
            let data = (0..numel(&shape))
                .map(|i| f(a.data[at(&ma, i)], b.data[at(&mb, i)]))
                .collect();
            (shape, data, a.needs_grad || b.needs_grad)
        };
        Ok(self.tape.push(shape, data, op, ng))
    }

    pub fn add(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    pub fn maximum(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "maximum", Op::Maximum(self.id, other.id), f64::max)
    }

    pub fn minimum(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.zip(other, "minimum", Op::Minimum(self.id, other.id), f64::min)
    }

    pub fn neg(&self) -> Var<'t> {
        self.map(Op::Neg(self.id), |x| -x)
    }

    pub fn scale(&self, s: f64) -> Var<'t> {
        self.map(Op::Scale(self.id, s), |x| x * s)
    }

    pub fn add_scalar(&self, s: f64) -> Var<'t> {
        self.map(Op::AddScalar(self.id), |x| x + s)
    }

    pub fn sigmoid(&self) -> Var<'t> {
        self.map(Op::Sigmoid(self.id), sigmoid)
    }

    pub fn relu(&self) -> Var<'t> {
        self.map(Op::Relu(self.id), |x| x.max(0.0))
    }

    pub fn exp(&self) -> Var<'t> {
        self.map(Op::Exp(self.id), f64::exp)
    }

    pub fn ln(&self) -> Var<'t> {
        self.map(Op::Ln(self.id), f64::ln)
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&self) -> Var<'t> {
        self.map(Op::Softplus(self.id), softplus)
    }

    pub fn abs(&self) -> Var<'t> {
        self.map(Op::Abs(self.id), f64::abs)
    }

    pub fn powf(&self, p: f64) -> Var<'t> {
        self.map(Op::Powf(self.id, p), |x| x.powf(p))
    }

    pub fn sqrt(&self) -> Var<'t> {
        self.map(Op::Sqrt(self.id), f64::sqrt)
    }

    /// Inverse sigmoid with the input clamped to `[eps, 1 - eps]`.
    pub fn logit(&self, eps: f64) -> Var<'t> {
        self.map(Op::Logit(self.id, eps), |x| {
            let p = x.clamp(eps, 1.0 - eps);
            (p / (1.0 - p)).ln()
        })
    }

    fn matmul_impl(&self, other: Var<'t>, ta: bool, tb: bool) -> Result<Var<'t>> {
        let (shape, data, ng, m, k, n) = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id], &nodes[other.id]);
            let mismatch = || TensorError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            };
            if a.shape.len() != 2 || b.shape.len() != 2 {
                return Err(mismatch());
            }
            let (m, k) = if ta {
                (a.shape[1], a.shape[0])
            } else {
                (a.shape[0], a.shape[1])
            };
            let (k2, n) = if tb {
                (b.shape[1], b.shape[0])
            } else {
                (b.shape[0], b.shape[1])
            };
            if k != k2 {
                return Err(mismatch());
            }
            let mut out = vec![0.0; m * n];
            gemm(
                m,
                k,
                n,
                &a.data,
                op_strides(ta, m, k),
                &b.data,
                op_strides(tb, k, n),
                0.0,
                &mut out,
                (n, 1),
            );
            (vec![m, n], out, a.needs_grad || b.needs_grad, m, k, n)
        };
        let op = Op::MatMul {
            a: self.id,
            b: other.id,
            ta,
            tb,
            m,
            k,
            n,
        };
        Ok(self.tape.push(shape, data, op, ng))
    }

    pub fn matmul(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, false, false)
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_t(&self, other: Var<'t>) -> Result<Var<'t>> {
        self.matmul_impl(other, false, true)
    }

    pub fn transpose(&self) -> Result<Var<'t>> {
        let (shape, data, ng) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if a.shape.len() != 2 {
                return Err(TensorError::Invalid(format!(
                    "transpose needs a matrix, got {:?}",
                    a.shape
                )));
            }
            let (r, c) = (a.shape[0], a.shape[1]);
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = a.data[i * c + j];
                }
            }
            (vec![c, r], out, a.needs_grad)
        };
        Ok(self.tape.push(shape, data, Op::Transpose(self.id), ng))
    }

    pub fn sum(&self) -> Var<'t> {
        let (s, ng) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            (a.data.iter().sum::<f64>(), a.needs_grad)
        };
        self.tape.push(vec![1], vec![s], Op::Sum(self.id), ng)
    }

    pub fn mean(&self) -> Var<'t> {
        let n = self.numel() as f64;
        self.sum().scale(1.0 / n)
    }

    /// Sums out `axis`; the result drops that axis (rank-0 results become `[1]`).
    pub fn sum_axis(&self, axis: usize) -> Result<Var<'t>> {
        let (shape, data, ng) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if axis >= a.shape.len() {
                return Err(TensorError::Axis {
                    op: "sum_axis",
                    axis,
                    shape: a.shape.clone(),
                });
            }
            let (outer, len, inner) = split_axis(&a.shape, axis);
            let mut out = vec![0.0; outer * inner];
            for o in 0..outer {
                for j in 0..len {
                    for i in 0..inner {
                        out[o * inner + i] += a.data[(o * len + j) * inner + i];
                    }
                }
            }
            let mut shape = a.shape.clone();
            shape.remove(axis);
            if shape.is_empty() {
                shape.push(1);
            }
            (shape, out, a.needs_grad)
        };
        Ok(self.tape.push(shape, data, Op::SumAxis(self.id, axis), ng))
    }

    pub fn softmax(&self, axis: usize) -> Result<Var<'t>> {
        let (shape, data, ng) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if axis >= a.shape.len() {
                return Err(TensorError::Axis {
                    op: "softmax",
                    axis,
                    shape: a.shape.clone(),
                });
            }
            let (outer, len, inner) = split_axis(&a.shape, axis);
            let mut out = vec![0.0; a.data.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * len + j) * inner + i;
                    let max = (0..len).map(|j| a.data[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for j in 0..len {
                        let e = (a.data[idx(j)] - max).exp();
                        out[idx(j)] = e;
                        total += e;
                    }
                    for j in 0..len {
                        out[idx(j)] /= total;
                    }
                }
            }
            (a.shape.clone(), out, a.needs_grad)
        };
        Ok(self.tape.push(shape, data, Op::Softmax(self.id, axis), ng))
    }

    /// Normalizes over the last axis, then applies `gain` and `bias` (both of
    /// the last axis' length).
    pub fn layer_norm(&self, gain: Var<'t>, bias: Var<'t>, eps: f64) -> Result<Var<'t>> {
        let (shape, data, ng, xhat, rstd) = {
            let nodes = self.tape.nodes.borrow();
            let (x, gw, bw) = (&nodes[self.id], &nodes[gain.id], &nodes[bias.id]);
            let n = *x.shape.last().unwrap();
            if gw.data.len() != n || bw.data.len() != n {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: x.shape.clone(),
                    rhs: gw.shape.clone(),
                });
            }
            let rows = x.data.len() / n;
            let mut xhat = vec![0.0; x.data.len()];
            let mut rstd = vec![0.0; rows];
            let mut out = vec![0.0; x.data.len()];
            for r in 0..rows {
                let row = &x.data[r * n..(r + 1) * n];
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let rs = 1.0 / (var + eps).sqrt();
                rstd[r] = rs;
                for j in 0..n {
                    let h = (row[j] - mean) * rs;
                    xhat[r * n + j] = h;
                    out[r * n + j] = h * gw.data[j] + bw.data[j];
                }
            }
            let ng = x.needs_grad || gw.needs_grad || bw.needs_grad;
            (x.shape.clone(), out, ng, xhat, rstd)
        };
        let op = Op::LayerNorm {
            x: self.id,
            gain: gain.id,
            bias: bias.id,
            xhat,
            rstd,
        };
        Ok(self.tape.push(shape, data, op, ng))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::Invalid("concat of zero tensors".into()))?;
        let tape = first.tape;
        let (shape, data, ng) = {
            let nodes = tape.nodes.borrow();
            let base = &nodes[first.id].shape;
            if axis >= base.len() {
                return Err(TensorError::Axis {
                    op: "concat",
                    axis,
                    shape: base.clone(),
                });
            }
            let mut shape = base.clone();
            shape[axis] = 0;
            for p in parts {
                let s = &nodes[p.id].shape;
                let compatible = s.len() == base.len()
                    && s.iter()
                        .zip(base)
                        .enumerate()
                        .all(|(d, (x, y))| d == axis || x == y);
                if !compatible {
                    return Err(TensorError::ShapeMismatch {
                        op: "concat",
                        lhs: base.clone(),
                        rhs: s.clone(),
                    });
                }
                shape[axis] += s[axis];
            }
            let (outer, _, inner) = split_axis(&shape, axis);
            let mut out = Vec::with_capacity(numel(&shape));
            for o in 0..outer {
                for p in parts {
                    let n = &nodes[p.id];
                    let chunk = n.shape[axis] * inner;
                    out.extend_from_slice(&n.data[o * chunk..(o + 1) * chunk]);
                }
            }
            let ng = parts.iter().any(|p| nodes[p.id].needs_grad);
            (shape, out, ng)
        };
        let ids = parts.iter().map(|p| p.id).collect();
        Ok(tape.push(shape, data, Op::Concat(ids, axis), ng))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Var<'t>> {
        let (shape, data, ng) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if axis >= a.shape.len() || start >= end || end > a.shape[axis] {
                return Err(TensorError::Invalid(format!(
                    "slice {start}..{end} on axis {axis} of {:?}",
                    a.shape
                )));
            }
            let (outer, full, inner) = split_axis(&a.shape, axis);
            let len = end - start;
            let mut out = Vec::with_capacity(outer * len * inner);
            for o in 0..outer {
                let base = (o * full + start) * inner;
                out.extend_from_slice(&a.data[base..base + len * inner]);
            }
            let mut shape = a.shape.clone();
            shape[axis] = len;
            (shape, out, a.needs_grad)
        };
        let op = Op::Slice {
            a: self.id,
            axis,
            start,
        };
        Ok(self.tape.push(shape, data, op, ng))
    }

    /// Picks rows (first-axis entries) by index; indices may repeat.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Var<'t>> {
        let (shape, data, ng) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if rows.is_empty() || rows.iter().any(|&r| r >= a.shape[0]) {
                return Err(TensorError::Invalid(format!(
                    "gather rows {rows:?} from {:?}",
                    a.shape
                )));
            }
            let width = a.data.len() / a.shape[0];
            let mut out = Vec::with_capacity(rows.len() * width);
            for &r in rows {
                out.extend_from_slice(&a.data[r * width..(r + 1) * width]);
            }
            let mut shape = a.shape.clone();
            shape[0] = rows.len();
            (shape, out, a.needs_grad)
        };
        Ok(self
            .tape
            .push(shape, data, Op::Gather(self.id, rows.to_vec()), ng))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t>> {
        let (data, ng) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            if numel(shape) != a.data.len() || shape.contains(&0) {
                return Err(TensorError::DataLength {
                    shape: shape.to_vec(),
                    expected: numel(shape),
                    actual: a.data.len(),
                });
            }
            (a.data.clone(), a.needs_grad)
        };
        Ok(self
            .tape
            .push(shape.to_vec(), data, Op::Reshape(self.id), ng))
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Var<'t>> {
        let (data, ng) = {
            let nodes = self.tape.nodes.borrow();
            let a = &nodes[self.id];
            let out = broadcast_shape("broadcast_to", &a.shape, shape)?;
            if out != shape {
                return Err(TensorError::ShapeMismatch {
                    op: "broadcast_to",
                    lhs: a.shape.clone(),
                    rhs: shape.to_vec(),
                });
            }
            let map = broadcast_map(shape, &a.shape);
            let data = (0..numel(shape)).map(|i| a.data[at(&map, i)]).collect();
            (data, a.needs_grad)
        };
        Ok(self
            .tape
            .push(shape.to_vec(), data, Op::BroadcastTo(self.id), ng))
    }
}
