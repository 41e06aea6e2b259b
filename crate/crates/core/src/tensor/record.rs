use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use super::{kernels, Result, Tensor, TensorError};

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Bmm(usize, usize),
    Affine { x: usize, w: usize, b: usize },
    Transpose(usize),
    Reshape(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Exp(usize),
    Ln(usize),
    Softmax { a: usize, axis: usize },
    LeakyRelu { a: usize, slope: f64 },
    GroupNorm { a: usize, groups: usize, eps: f64 },
    Concat { parts: Vec<usize>, axis: usize },
    Select { a: usize, index: usize },
    MeanAxis { a: usize, axis: usize },
    Sum(usize),
    CrossEntropy { logits: usize, labels: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    /// True when some requires-grad leaf is reachable through this node.
    needs_grad: bool,
}

/// Records operations on [`Var`]s in topological order so that
/// [`Graph::backward`] can propagate gradients back to the parameter leaves.
///
/// One graph is used per optimization step; `backward` clears it, and any
/// `Var` created before that point becomes stale.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
    generation: Cell<u64>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
    generation: u64,
}

/// Gradients of a scalar loss with respect to every requires-grad leaf.
#[derive(Debug, Default)]
pub struct Gradients {
    by_leaf: HashMap<usize, Tensor>,
}

impl Gradients {
    pub fn get(&self, leaf: &Var<'_>) -> Option<&Tensor> {
        self.by_leaf.get(&leaf.id)
    }

    pub fn take(&mut self, leaf: &Var<'_>) -> Option<Tensor> {
        self.by_leaf.remove(&leaf.id)
    }

    pub fn len(&self) -> usize {
        self.by_leaf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_leaf.is_empty()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Smallest `|x|` over the inputs of every recorded leaky ReLU; `None`
    /// when there are none. Finite differences straddle a kink unless this
    /// comfortably exceeds the step.
    pub fn kink_margin(&self) -> Option<f64> {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu { a, .. } => Some(nodes[a].value.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))),
                _ => None,
            })
            .reduce(f64::min)
    }

    /// A trainable leaf; it receives a gradient from [`Graph::backward`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that takes no gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let needs_grad = requires_grad || parents(&op).iter().any(|&p| nodes[p].needs_grad);
        nodes.push(Node {
            value,
            op,
            requires_grad,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
            generation: self.generation.get(),
        }
    }

    fn check(&self, var: &Var<'_>) {
        assert!(
            std::ptr::eq(self, var.graph) && var.generation == self.generation.get(),
            "variable used after its differentiation record was cleared"
        );
    }

    /// Concatenates several recorded values along `axis`.
    pub fn concat<'g>(&'g self, parts: &[Var<'g>], axis: usize) -> Result<Var<'g>> {
        parts.iter().for_each(|p| self.check(p));
        let value = {
            let nodes = self.nodes.borrow();
            let tensors: Vec<&Tensor> = parts.iter().map(|p| &nodes[p.id].value).collect();
            Tensor::concat(&tensors, axis)?
        };
        let parts = parts.iter().map(|p| p.id).collect();
        Ok(self.push(value, Op::Concat { parts, axis }, false))
    }

    /// Propagates gradients from the scalar `loss` back to every
    /// requires-grad leaf, then clears the record.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        self.check(&loss);
        {
            let nodes = self.nodes.borrow();
            let shape = nodes[loss.id].value.shape();
            if nodes[loss.id].value.numel() != 1 {
                return Err(TensorError::NonScalarLoss(shape.to_vec()));
            }
        }
        let nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        self.generation.set(self.generation.get() + 1);

        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        grads[loss.id] = Some(Tensor::ones(nodes[loss.id].value.shape()));
        let mut by_leaf = HashMap::new();

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    by_leaf.insert(id, g);
                }
                continue;
            }
            for (parent, contribution) in vjp(&nodes, node, &g) {
                match &mut grads[parent] {
                    Some(acc) => {
                        for (a, c) in acc.data.iter_mut().zip(&contribution.data) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        for (id, node) in nodes.iter().enumerate() {
            if node.requires_grad {
                by_leaf
                    .entry(id)
                    .or_insert_with(|| Tensor::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { by_leaf })
    }
}

fn parents(op: &Op) -> Vec<usize> {
    match op {
        Op::Leaf => vec![],
        Op::MatMul(a, b) | Op::Bmm(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => {
            vec![*a, *b]
        }
        Op::Affine { x, w, b } => vec![*x, *w, *b],
        Op::Transpose(a)
        | Op::Reshape(a)
        | Op::Scale(a, _)
        | Op::Exp(a)
        | Op::Ln(a)
        | Op::Sum(a)
        | Op::Softmax { a, .. }
        | Op::LeakyRelu { a, .. }
        | Op::GroupNorm { a, .. }
        | Op::Select { a, .. }
        | Op::MeanAxis { a, .. } => vec![*a],
        Op::Concat { parts, .. } => parts.clone(),
        Op::CrossEntropy { logits, .. } => vec![*logits],
    }
}

fn raw(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

/// Vector-Jacobian products of one node: the gradient contribution of `g`
/// (the gradient w.r.t. the node's output) to each parent that needs one.
fn vjp(nodes: &[Node], node: &Node, g: &Tensor) -> Vec<(usize, Tensor)> {
    let needs = |id: usize| nodes[id].needs_grad;
    let val = |id: usize| &nodes[id].value;
    let mut out = Vec::new();
    match &node.op {
        Op::Leaf => {}
        &Op::MatMul(a, b) => {
            let (m, k) = (val(a).shape[0], val(a).shape[1]);
            let n = val(b).shape[1];
            if needs(a) {
                let mut ga = vec![0.0; m * k];
                kernels::gemm(m, n, k, &g.data, false, &val(b).data, true, &mut ga, false);
                out.push((a, raw(&[m, k], ga)));
            }
            if needs(b) {
                let mut gb = vec![0.0; k * n];
                kernels::gemm(k, m, n, &val(a).data, true, &g.data, false, &mut gb, false);
                out.push((b, raw(&[k, n], gb)));
            }
        }
        &Op::Bmm(a, b) => {
            let (bs, m, k) = (val(a).shape[0], val(a).shape[1], val(a).shape[2]);
            let n = val(b).shape[2];
            if needs(a) {
                let mut ga = vec![0.0; bs * m * k];
                for i in 0..bs {
                    kernels::gemm(
                        m,
                        n,
                        k,
                        &g.data[i * m * n..(i + 1) * m * n],
                        false,
                        &val(b).data[i * k * n..(i + 1) * k * n],
                        true,
                        &mut ga[i * m * k..(i + 1) * m * k],
                        false,
                    );
                }
                out.push((a, raw(&[bs, m, k], ga)));
            }
            if needs(b) {
                let mut gb = vec![0.0; bs * k * n];
                for i in 0..bs {
                    kernels::gemm(
                        k,
                        m,
                        n,
                        &val(a).data[i * m * k..(i + 1) * m * k],
                        true,
                        &g.data[i * m * n..(i + 1) * m * n],
                        false,
                        &mut gb[i * k * n..(i + 1) * k * n],
                        false,
                    );
                }
                out.push((b, raw(&[bs, k, n], gb)));
            }
        }
        &Op::Affine { x, w, b } => {
            let (m, k) = (val(x).shape[0], val(x).shape[1]);
            let n = val(w).shape[1];
            if needs(x) {
                let mut gx = vec![0.0; m * k];
                kernels::gemm(m, n, k, &g.data, false, &val(w).data, true, &mut gx, false);
                out.push((x, raw(&[m, k], gx)));
            }
            if needs(w) {
                let mut gw = vec![0.0; k * n];
                kernels::gemm(k, m, n, &val(x).data, true, &g.data, false, &mut gw, false);
                out.push((w, raw(&[k, n], gw)));
            }
            if needs(b) {
                let mut gb = vec![0.0; n];
                for row in g.data.chunks(n) {
                    gb.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
                }
                out.push((b, raw(&[n], gb)));
            }
        }
        &Op::Transpose(a) => {
            out.push((a, g.transpose().expect("gradient has the output's rank")));
        }
        &Op::Reshape(a) => out.push((a, raw(val(a).shape(), g.data.clone()))),
        &Op::Add(a, b) => {
            if needs(a) {
                out.push((a, g.clone()));
            }
            if needs(b) {
                out.push((b, g.clone()));
            }
        }
        &Op::Sub(a, b) => {
            if needs(a) {
                out.push((a, g.clone()));
            }
            if needs(b) {
                out.push((b, raw(g.shape(), g.data.iter().map(|v| -v).collect())));
            }
        }
        &Op::Mul(a, b) => {
            let times = |other: &Tensor| {
                raw(g.shape(), g.data.iter().zip(&other.data).map(|(x, y)| x * y).collect())
            };
            if needs(a) {
                out.push((a, times(val(b))));
            }
            if needs(b) {
                out.push((b, times(val(a))));
            }
        }
        &Op::Scale(a, s) => out.push((a, raw(g.shape(), g.data.iter().map(|v| v * s).collect()))),
        &Op::Exp(a) => out.push((
            a,
            raw(g.shape(), g.data.iter().zip(&node.value.data).map(|(x, y)| x * y).collect()),
        )),
        &Op::Ln(a) => out.push((
            a,
            raw(g.shape(), g.data.iter().zip(&val(a).data).map(|(x, y)| x / y).collect()),
        )),
        &Op::Softmax { a, axis } => {
            let y = &node.value;
            let (outer, len, inner) = y.axis_split(axis, "softmax").expect("axis was valid forward");
            let mut ga = vec![0.0; y.numel()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * len + j) * inner + i;
                    let dot: f64 = (0..len).map(|j| g.data[idx(j)] * y.data[idx(j)]).sum();
                    for j in 0..len {
                        ga[idx(j)] = y.data[idx(j)] * (g.data[idx(j)] - dot);
                    }
                }
            }
            out.push((a, raw(y.shape(), ga)));
        }
        &Op::LeakyRelu { a, slope } => out.push((
            a,
            raw(
                g.shape(),
                g.data
                    .iter()
                    .zip(&val(a).data)
                    .map(|(gv, x)| if *x > 0.0 { *gv } else { slope * gv })
                    .collect(),
            ),
        )),
        &Op::GroupNorm { a, groups, eps } => {
            let x = val(a);
            let width = x.shape.last().copied().unwrap_or(1) / groups;
            let mut ga = vec![0.0; x.numel()];
            for ((xs, gs), dst) in x
                .data
                .chunks(width)
                .zip(g.data.chunks(width))
                .zip(ga.chunks_mut(width))
            {
                let (mean, inv_std) = kernels::moments(xs, eps);
                let len = width as f64;
                let g_mean = gs.iter().sum::<f64>() / len;
                let gx_mean = xs
                    .iter()
                    .zip(gs)
                    .map(|(xv, gv)| (xv - mean) * inv_std * gv)
                    .sum::<f64>()
                    / len;
                for ((d, xv), gv) in dst.iter_mut().zip(xs).zip(gs) {
                    let xhat = (xv - mean) * inv_std;
                    *d = inv_std * (gv - g_mean - xhat * gx_mean);
                }
            }
            out.push((a, raw(x.shape(), ga)));
        }
        Op::Concat { parts, axis } => {
            let axis = *axis;
            let outer: usize = node.value.shape[..axis].iter().product();
            let inner: usize = node.value.shape[axis + 1..].iter().product();
            let total = node.value.shape[axis] * inner;
            let mut offset = 0;
            for &p in parts {
                let block = val(p).shape[axis] * inner;
                if needs(p) {
                    let mut gp = Vec::with_capacity(outer * block);
                    for o in 0..outer {
                        let start = o * total + offset;
                        gp.extend_from_slice(&g.data[start..start + block]);
                    }
                    out.push((p, raw(val(p).shape(), gp)));
                }
                offset += block;
            }
        }
        &Op::Select { a, index } => {
            let mut ga = vec![0.0; val(a).numel()];
            let block = g.numel();
            ga[index * block..(index + 1) * block].copy_from_slice(&g.data);
            out.push((a, raw(val(a).shape(), ga)));
        }
        &Op::MeanAxis { a, axis } => {
            let shape = val(a).shape();
            let outer: usize = shape[..axis].iter().product();
            let len = shape[axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let mut ga = Vec::with_capacity(val(a).numel());
            for o in 0..outer {
                let src = &g.data[o * inner..(o + 1) * inner];
                for _ in 0..len {
                    ga.extend(src.iter().map(|v| v / len as f64));
                }
            }
            out.push((a, raw(shape, ga)));
        }
        &Op::Sum(a) => out.push((a, Tensor::full(val(a).shape(), g.data[0]))),
        Op::CrossEntropy { logits, labels } => {
            let z = val(*logits);
            let classes = z.shape[1];
            let rows = labels.len() as f64;
            let mut gz = Vec::with_capacity(z.numel());
            for (row, &label) in z.data.chunks(classes).zip(labels) {
                let probs = softmax_row(row);
                for (c, p) in probs.into_iter().enumerate() {
                    let target = if c == label { 1.0 } else { 0.0 };
                    gz.push(g.data[0] * (p - target) / rows);
                }
            }
            out.push((*logits, raw(z.shape(), gz)));
        }
    }
    out
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl<'g> Var<'g> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.graph.check(self);
        self.graph.nodes.borrow()[self.id].value.clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.check(self);
        self.graph.nodes.borrow()[self.id].value.shape.clone()
    }

    fn unary(self, op: Op, f: impl FnOnce(&Tensor) -> Result<Tensor>) -> Result<Var<'g>> {
        self.graph.check(&self);
        let value = f(&self.graph.nodes.borrow()[self.id].value)?;
        Ok(self.graph.push(value, op, false))
    }

    fn binary(
        self,
        rhs: Var<'g>,
        op: Op,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
    ) -> Result<Var<'g>> {
        self.graph.check(&self);
        self.graph.check(&rhs);
        let value = {
            let nodes = self.graph.nodes.borrow();
            f(&nodes[self.id].value, &nodes[rhs.id].value)?
        };
        Ok(self.graph.push(value, op, false))
    }

    pub fn matmul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Op::MatMul(self.id, rhs.id), Tensor::matmul)
    }

    pub fn bmm(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Op::Bmm(self.id, rhs.id), Tensor::bmm)
    }

    /// `self · weight + bias` with the bias added to every row.
    pub fn affine(self, weight: Var<'g>, bias: Var<'g>) -> Result<Var<'g>> {
        self.graph.check(&self);
        self.graph.check(&weight);
        self.graph.check(&bias);
        let value = {
            let nodes = self.graph.nodes.borrow();
            nodes[self.id]
                .value
                .affine(&nodes[weight.id].value, &nodes[bias.id].value)?
        };
        let op = Op::Affine {
            x: self.id,
            w: weight.id,
            b: bias.id,
        };
        Ok(self.graph.push(value, op, false))
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        self.unary(Op::Transpose(self.id), Tensor::transpose)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        self.unary(Op::Reshape(self.id), |t| t.reshape(shape))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Op::Add(self.id, rhs.id), Tensor::add)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Op::Sub(self.id, rhs.id), Tensor::sub)
    }

    pub fn hadamard(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.binary(rhs, Op::Mul(self.id, rhs.id), Tensor::hadamard)
    }

    pub fn scale(self, factor: f64) -> Result<Var<'g>> {
        self.unary(Op::Scale(self.id, factor), |t| t.scale(factor))
    }

    pub fn exp(self) -> Result<Var<'g>> {
        self.unary(Op::Exp(self.id), Tensor::exp)
    }

    pub fn ln(self) -> Result<Var<'g>> {
        self.unary(Op::Ln(self.id), Tensor::ln)
    }

    pub fn softmax(self, axis: usize) -> Result<Var<'g>> {
        self.unary(Op::Softmax { a: self.id, axis }, |t| t.softmax(axis))
    }

    pub fn leaky_relu(self, slope: f64) -> Result<Var<'g>> {
        self.unary(Op::LeakyRelu { a: self.id, slope }, |t| t.leaky_relu(slope))
    }

    pub fn group_normalize(self, groups: usize, eps: f64) -> Result<Var<'g>> {
        self.unary(Op::GroupNorm { a: self.id, groups, eps }, |t| {
            t.group_normalize(groups, eps)
        })
    }

    pub fn concat(self, rhs: Var<'g>, axis: usize) -> Result<Var<'g>> {
        self.graph.concat(&[self, rhs], axis)
    }

    pub fn select(self, index: usize) -> Result<Var<'g>> {
        self.unary(Op::Select { a: self.id, index }, |t| t.select(index))
    }

    pub fn mean_axis(self, axis: usize) -> Result<Var<'g>> {
        self.unary(Op::MeanAxis { a: self.id, axis }, |t| t.mean_axis(axis))
    }

    pub fn sum(self) -> Result<Var<'g>> {
        self.unary(Op::Sum(self.id), |t| Ok(Tensor::scalar(t.sum())))
            .and_then(|v| {
                if v.graph.nodes.borrow()[v.id].value.data[0].is_finite() {
                    Ok(v)
                } else {
                    Err(TensorError::NonFinite { op: "sum", index: 0 })
                }
            })
    }

    /// Mean negative log-likelihood of `labels` under the row-wise softmax of
    /// `self: [rows, classes]`.
    pub fn cross_entropy(self, labels: &[usize]) -> Result<Var<'g>> {
        let labels = labels.to_vec();
        let op = Op::CrossEntropy {
            logits: self.id,
            labels: labels.clone(),
        };
        self.unary(op, move |z| {
            let (rows, classes) = match z.shape() {
                &[r, c] if r == labels.len() => (r, c),
                s => {
                    return Err(TensorError::Shape {
                        op: "cross_entropy",
                        lhs: s.to_vec(),
                        rhs: vec![labels.len()],
                    })
                }
            };
            if let Some(bad) = labels.iter().position(|&l| l >= classes) {
                return Err(TensorError::Config(format!(
                    "label {} at row {bad} is not a class index below {classes}",
                    labels[bad]
                )));
            }
            let mut total = 0.0;
            for (row, &label) in z.data.chunks(classes).zip(&labels) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                total += lse - row[label];
            }
            Tensor::scalar(total / rows as f64).check_finite("cross_entropy")
        })
    }
}
