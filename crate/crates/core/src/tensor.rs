//! Dense `f64` tensors and a reverse-mode operation tape.
//!
//! Parameters live in a [`ParamStore`] and are referenced by [`ParamId`].
//! A [`Tape`] borrows the store read-only while it records a forward pass;
//! [`Tape::backward`] then produces [`Gradients`] that the caller folds back
//! into the store with [`ParamStore::accumulate`]. Because the tape never
//! mutates the store, a trained model can serve many concurrent tapes.
//!
//! Every multiply-accumulate performed by a linear kernel is charged to the
//! tape's FLOP counter, which the cost model uses as a brute-force oracle.

use crate::error::{Error, Result};

/// Guard added inside logarithms.
pub const LOG_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::dim("tensor", &shape, &[values.len()]));
        }
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::dim("tensor", &shape, &[values.len()]));
        }
        Ok(Tensor {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            values: vec![v],
            grad: None,
        }
    }

    pub fn vector(values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![values.len()], values)
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], values)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Adds `g` into the gradient slot, creating it if absent.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.values.len() {
            return Err(Error::dim("accumulate_grad", &self.shape, &[g.len()]));
        }
        match &mut self.grad {
            Some(slot) => slot.iter_mut().zip(g).for_each(|(s, v)| *s += v),
            None => self.grad = Some(g.to_vec()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }
}

/// Plain SGD: `param -= lr * grad`, then zero the gradient.
///
/// Every tensor must carry a gradient; nothing is modified otherwise.
pub fn sgd_step<'a, I>(params: I, lr: f64) -> Result<()>
where
    I: IntoIterator<Item = &'a mut Tensor>,
{
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be >= 0, got {lr}")));
    }
    let mut params: Vec<&mut Tensor> = params.into_iter().collect();
    if let Some(pos) = params.iter().position(|t| t.grad.is_none()) {
        return Err(Error::Calibration(format!(
            "parameter #{pos} has no gradient; run backward before stepping"
        )));
    }
    for t in params.iter_mut() {
        let grad = t.grad.as_mut().expect("checked above");
        for (v, g) in t.values.iter_mut().zip(grad.iter_mut()) {
            *v -= lr * *g;
            *g = 0.0;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
    pub trainable: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor, trainable: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            tensor,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn accumulate(&mut self, grads: &Gradients) -> Result<()> {
        for (id, g) in &grads.entries {
            self.params[id.0].tensor.accumulate_grad(g)?;
        }
        Ok(())
    }

    /// Ensures every trainable parameter has a (possibly zero) gradient slot.
    pub fn ensure_grads(&mut self) {
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            if p.tensor.grad.is_none() {
                p.tensor.grad = Some(vec![0.0; p.tensor.len()]);
            }
        }
    }

    pub fn zero_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// SGD over trainable parameters only.
    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        sgd_step(
            self.params.iter_mut().filter(|p| p.trainable).map(|p| &mut p.tensor),
            lr,
        )
    }
}

/// Parameter gradients extracted from a tape after `backward`.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    entries: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.entries.iter().map(|(p, g)| (*p, g.as_slice()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Affine {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        batch: usize,
        inp: usize,
        out: usize,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Sum(NodeId),
    Pick(NodeId, usize),
    MeanRows {
        table: NodeId,
        rows: Vec<usize>,
        dim: usize,
    },
    Softmax(NodeId),
    CrossEntropy {
        probs: NodeId,
        label: usize,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    shape: Vec<usize>,
    // Empty for `Op::Param`; those read through the store.
    value: Vec<f64>,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    flops: u64,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
            grads: Vec::new(),
            backward_done: false,
            flops: 0,
        }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, shape, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        match &self.nodes[id.0].op {
            Op::Param(p) => self.params.get(*p).values(),
            _ => &self.nodes[id.0].value,
        }
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Multiply-accumulates (plus explicitly charged ops) performed so far.
    pub fn flops(&self) -> u64 {
        self.flops
    }

    /// Charges `n` operations to the FLOP counter.
    pub fn charge(&mut self, n: u64) {
        self.flops += n;
    }

    /// Records a constant input. Its gradient is available via [`Tape::grad`].
    pub fn input(&mut self, t: &Tensor) -> NodeId {
        self.push(Op::Leaf, t.shape().to_vec(), t.values().to_vec())
    }

    pub fn input_vec(&mut self, values: Vec<f64>) -> NodeId {
        let shape = vec![values.len()];
        self.push(Op::Leaf, shape, values)
    }

    /// Leaf node for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        let shape = self.params.get(id).shape().to_vec();
        let n = self.push(Op::Param(id), shape, Vec::new());
        self.param_nodes[id.0] = Some(n);
        n
    }

    /// `x·W + b` for `x` of shape `[in]` or `[batch, in]`, `W` of `[in, out]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let (batch, inp) = match xs.as_slice() {
            [i] => (1, *i),
            [n, i] => (*n, *i),
            _ => return Err(Error::dim("affine", &xs, &ws)),
        };
        let out = match ws.as_slice() {
            [i, o] if *i == inp => *o,
            _ => return Err(Error::dim("affine", &xs, &ws)),
        };
        if let Some(b) = b {
            if self.shape(b) != [out] {
                return Err(Error::dim("affine bias", &ws, self.shape(b)));
            }
        }
        let mut y = match b {
            Some(b) => self.value(b).repeat(batch),
            None => vec![0.0; batch * out],
        };
        let xv = self.value(x);
        let wv = self.value(w);
        let mut macs = 0u64;
        for r in 0..batch {
            let row = &mut y[r * out..(r + 1) * out];
            for k in 0..inp {
                let xk = xv[r * inp + k];
                let wrow = &wv[k * out..(k + 1) * out];
                for (yj, wkj) in row.iter_mut().zip(wrow) {
                    *yj += xk * wkj;
                    macs += 1;
                }
            }
        }
        self.flops += macs;
        let shape = if xs.len() == 1 { vec![out] } else { vec![batch, out] };
        Ok(self.push(
            Op::Affine {
                x,
                w,
                b,
                batch,
                inp,
                out,
            },
            shape,
            y,
        ))
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> NodeId {
        let v = self.value(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        self.push(op, shape, v)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(name, self.shape(a), self.shape(b)));
        }
        let v = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        Ok(self.push(op, shape, v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).iter().sum();
        self.push(Op::Sum(a), vec![1], vec![s])
    }

    pub fn pick(&mut self, a: NodeId, index: usize) -> Result<NodeId> {
        let v = self.value(a);
        let x = *v.get(index).ok_or(Error::Index {
            what: "element",
            index,
            bound: v.len(),
        })?;
        Ok(self.push(Op::Pick(a, index), vec![1], vec![x]))
    }

    /// Arithmetic mean of the selected rows of a `[rows, dim]` table.
    pub fn mean_rows(&mut self, table: NodeId, rows: &[usize]) -> Result<NodeId> {
        if rows.is_empty() {
            return Err(Error::EmptyUtterance);
        }
        let (n_rows, dim) = match self.shape(table) {
            [r, d] => (*r, *d),
            s => return Err(Error::dim("mean_rows", s, &[rows.len()])),
        };
        if let Some(&bad) = rows.iter().find(|&&r| r >= n_rows) {
            return Err(Error::Index {
                what: "vocabulary",
                index: bad,
                bound: n_rows,
            });
        }
        let tv = self.value(table);
        let mut out = vec![0.0; dim];
        for &r in rows {
            out.iter_mut()
                .zip(&tv[r * dim..(r + 1) * dim])
                .for_each(|(o, v)| *o += v);
        }
        let inv = 1.0 / rows.len() as f64;
        out.iter_mut().for_each(|o| *o *= inv);
        Ok(self.push(
            Op::MeanRows {
                table,
                rows: rows.to_vec(),
                dim,
            },
            vec![dim],
            out,
        ))
    }

    /// A single table row (used for per-token embeddings).
    pub fn row(&mut self, table: NodeId, row: usize) -> Result<NodeId> {
        self.mean_rows(table, &[row])
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let s = self.shape(a);
        if s.len() != 1 || s[0] < 2 {
            return Err(Error::dim("softmax", s, &[2]));
        }
        let p = softmax(self.value(a));
        let shape = s.to_vec();
        Ok(self.push(Op::Softmax(a), shape, p))
    }

    /// `-ln(p[label] + eps)`.
    pub fn cross_entropy(&mut self, probs: NodeId, label: usize) -> Result<NodeId> {
        let p = self.value(probs);
        let pl = *p.get(label).ok_or(Error::Index {
            what: "class label",
            index: label,
            bound: p.len(),
        })?;
        let loss = -(pl + LOG_EPS).ln();
        Ok(self.push(Op::CrossEntropy { probs, label }, vec![1], vec![loss]))
    }

    /// Reverse-mode sweep from a scalar node.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::DoubleBackward);
        }
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", self.shape(loss), &[1]));
        }
        self.grads = vec![None; self.nodes.len()];
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        self.backward_done = true;

        let mut entries = Vec::new();
        for (p, node) in self.param_nodes.iter().enumerate() {
            if let Some(n) = node {
                if let Some(g) = &self.grads[n.0] {
                    entries.push((ParamId(p), g.clone()));
                }
            }
        }
        Ok(Gradients { entries })
    }

    fn acc(&mut self, target: NodeId, len: usize) -> &mut Vec<f64> {
        self.grads[target.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf | Op::Param(_) => {}
            Op::Affine {
                x,
                w,
                b,
                batch,
                inp,
                out,
            } => {
                let xv = self.value(x).to_vec();
                let wv = self.value(w).to_vec();
                let gx = self.acc(x, batch * inp);
                for r in 0..batch {
                    for k in 0..inp {
                        let wrow = &wv[k * out..(k + 1) * out];
                        let grow = &g[r * out..(r + 1) * out];
                        gx[r * inp + k] += wrow.iter().zip(grow).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                let gw = self.acc(w, inp * out);
                for r in 0..batch {
                    for k in 0..inp {
                        let xk = xv[r * inp + k];
                        gw[k * out..(k + 1) * out]
                            .iter_mut()
                            .zip(&g[r * out..(r + 1) * out])
                            .for_each(|(a, gj)| *a += xk * gj);
                    }
                }
                if let Some(b) = b {
                    let gb = self.acc(b, out);
                    for r in 0..batch {
                        gb.iter_mut()
                            .zip(&g[r * out..(r + 1) * out])
                            .for_each(|(a, gj)| *a += gj);
                    }
                }
            }
            Op::Relu(a) => {
                let y = self.nodes[i].value.clone();
                let ga = self.acc(a, y.len());
                for ((d, yv), gv) in ga.iter_mut().zip(&y).zip(g) {
                    if *yv > 0.0 {
                        *d += gv;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let y = self.nodes[i].value.clone();
                let ga = self.acc(a, y.len());
                for ((d, yv), gv) in ga.iter_mut().zip(&y).zip(g) {
                    *d += gv * yv * (1.0 - yv);
                }
            }
            Op::Tanh(a) => {
                let y = self.nodes[i].value.clone();
                let ga = self.acc(a, y.len());
                for ((d, yv), gv) in ga.iter_mut().zip(&y).zip(g) {
                    *d += gv * (1.0 - yv * yv);
                }
            }
            Op::Add(a, b) => {
                for t in [a, b] {
                    let gt = self.acc(t, g.len());
                    gt.iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(a).to_vec();
                let bv = self.value(b).to_vec();
                let ga = self.acc(a, g.len());
                for ((d, bv), gv) in ga.iter_mut().zip(&bv).zip(g) {
                    *d += gv * bv;
                }
                let gb = self.acc(b, g.len());
                for ((d, av), gv) in gb.iter_mut().zip(&av).zip(g) {
                    *d += gv * av;
                }
            }
            Op::Scale(a, c) => {
                let ga = self.acc(a, g.len());
                ga.iter_mut().zip(g).for_each(|(d, gv)| *d += c * gv);
            }
            Op::Sum(a) => {
                let n = self.value(a).len();
                let ga = self.acc(a, n);
                ga.iter_mut().for_each(|d| *d += g[0]);
            }
            Op::Pick(a, index) => {
                let n = self.value(a).len();
                self.acc(a, n)[index] += g[0];
            }
            Op::MeanRows { table, rows, dim } => {
                let n = self.value(table).len();
                let inv = 1.0 / rows.len() as f64;
                let gt = self.acc(table, n);
                for r in rows {
                    gt[r * dim..(r + 1) * dim]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(d, gv)| *d += gv * inv);
                }
            }
            Op::Softmax(a) => {
                let p = self.nodes[i].value.clone();
                let dot: f64 = p.iter().zip(g).map(|(p, g)| p * g).sum();
                let ga = self.acc(a, p.len());
                for ((d, pv), gv) in ga.iter_mut().zip(&p).zip(g) {
                    *d += pv * (gv - dot);
                }
            }
            Op::CrossEntropy { probs, label } => {
                let pl = self.value(probs)[label];
                let n = self.value(probs).len();
                self.acc(probs, n)[label] -= g[0] / (pl + LOG_EPS);
            }
        }
    }

    /// Gradient of the last `backward` root with respect to `node`.
    pub fn grad(&self, node: NodeId) -> Option<&[f64]> {
        self.grads.get(node.0).and_then(|g| g.as_deref())
    }

    /// Drops gradients so `backward` may run again.
    pub fn reset(&mut self) {
        self.grads.clear();
        self.backward_done = false;
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

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= s);
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
