//! Reverse-mode automatic differentiation over an append-only tape.
//!
//! Every op pushes a node holding its output value and whatever it needs for
//! the backward pass. Parents always precede children, so a single reverse
//! sweep over the node list is a valid topological order.

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{contract, Error, Result};
use crate::par::Exec;
use crate::tensor::kernels;
use crate::tensor::{ConvSpec, Tensor};

/// A differentiable op defined outside this module.
///
/// `backward` returns one entry per input, `None` meaning "no contribution".
pub trait Function {
    fn name(&self) -> &'static str;
    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Option<Tensor>>;
}

/// Pointwise ops exposed through [`Var::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Scale(f64),
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Relu(usize),
    Sigmoid(usize),
    Grl(usize, f64),
    Sum(usize),
    Mean(usize),
    Conv2d { x: usize, w: usize, b: usize, spec: ConvSpec },
    ConvTranspose2d { x: usize, w: usize, b: Option<usize>, spec: ConvSpec },
    MaxPool2x2 { x: usize, argmax: Vec<usize> },
    ConcatChannels(usize, usize),
    GlobalAvgPool(usize),
    Linear { x: usize, w: usize, b: usize },
    SoftmaxCrossEntropy { logits: usize, probs: Vec<f64>, labels: Vec<usize> },
    Mse(usize, usize),
    BceWithLogits { logits: usize, targets: Vec<f64> },
    Custom { inputs: Vec<usize>, f: Box<dyn Function> },
}

impl Op {
    fn parents(&self) -> Vec<usize> {
        use Op::*;
        match self {
            Leaf => vec![],
            Add(a, b) | Sub(a, b) | Mul(a, b) | ConcatChannels(a, b) | Mse(a, b) => vec![*a, *b],
            Scale(a, _) | Relu(a) | Sigmoid(a) | Grl(a, _) | Sum(a) | Mean(a) | GlobalAvgPool(a) => vec![*a],
            Conv2d { x, w, b, .. } | Linear { x, w, b } => vec![*x, *w, *b],
            ConvTranspose2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            MaxPool2x2 { x, .. } => vec![*x],
            SoftmaxCrossEntropy { logits, .. } | BceWithLogits { logits, .. } => vec![*logits],
            Custom { inputs, .. } => inputs.clone(),
        }
    }
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records a computation for one forward/backward pass.
///
/// A tape is single-threaded; independent passes use independent tapes.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    exec: Exec,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tape({} nodes)", self.len())
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), exec: Exec::default() }
    }

    pub fn with_exec(exec: Exec) -> Self {
        Tape { nodes: RefCell::new(Vec::new()), exec }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A trainable input: gradients are kept for it after [`Tape::backward`].
    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A constant input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn push_op(&self, value: Tensor, op: Op) -> Var<'_> {
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.parents().iter().any(|&p| nodes[p].requires_grad)
        };
        self.push(value, op, requires_grad)
    }

    fn value(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    /// Applies a user-defined [`Function`].
    pub fn apply<'t>(&'t self, f: Box<dyn Function>, inputs: &[Var<'t>]) -> Result<Var<'t>> {
        let values: Vec<Rc<Tensor>> = inputs.iter().map(|v| v.value()).collect();
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let out = f.forward(&refs)?;
        check_finite(&out, f.name())?;
        Ok(self.push_op(out, Op::Custom { inputs: inputs.iter().map(|v| v.id).collect(), f }))
    }

    /// Back-propagates from a scalar `loss`. Gradients accumulate additively
    /// over every use of a node.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        contract!(
            root.value.is_scalar(),
            "backward needs a scalar loss, got shape {:?}",
            root.value.shape()
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; nodes.len()];
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.id] = Some(Tensor::from_parts(root.value.shape().to_vec(), vec![1.0]));
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (parent, pg) in self.vjp(&nodes, node, &g)? {
                if !nodes[parent].requires_grad {
                    continue;
                }
                match &mut grads[parent] {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(pg.data()) {
                            *a += v;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients { grads })
    }

    /// Vector-Jacobian products of `node` given its output gradient `g`.
    fn vjp(&self, nodes: &[Node], node: &Node, g: &Tensor) -> Result<Vec<(usize, Tensor)>> {
        let val = |i: usize| nodes[i].value.as_ref();
        let zip = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            Tensor::from_parts(
                a.shape().to_vec(),
                a.data().iter().zip(g.data()).map(|(&x, &gv)| f(x, gv)).collect(),
            )
        };
        let out = node.value.as_ref();
        Ok(match &node.op {
            Op::Leaf => vec![],
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => vec![(*a, zip(val(*b), &|y, gv| y * gv)), (*b, zip(val(*a), &|x, gv| x * gv))],
            Op::Scale(a, k) => vec![(*a, g.map(|v| v * k))],
            Op::Relu(a) => vec![(*a, zip(val(*a), &|x, gv| if x > 0.0 { gv } else { 0.0 }))],
            Op::Sigmoid(a) => vec![(*a, zip(out, &|y, gv| y * (1.0 - y) * gv))],
            Op::Grl(a, lambda) => vec![(*a, g.map(|v| -lambda * v))],
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), g.item()))],
            Op::Mean(a) => {
                let x = val(*a);
                vec![(*a, Tensor::full(x.shape(), g.item() / x.len() as f64))]
            }
            Op::Conv2d { x, w, b, spec } => {
                let (dx, dw, db) = kernels::conv2d_backward(val(*x), val(*w), spec, g, self.exec)?;
                vec![(*x, dx), (*w, dw), (*b, db)]
            }
            Op::ConvTranspose2d { x, w, b, spec } => {
                let (dx, dw, db) = kernels::conv_transpose2d_backward(val(*x), val(*w), spec, g, self.exec)?;
                let mut v = vec![(*x, dx), (*w, dw)];
                if let Some(b) = b {
                    v.push((*b, db));
                }
                v
            }
            Op::MaxPool2x2 { x, argmax } => {
                vec![(*x, kernels::max_pool2x2_backward(val(*x).shape(), argmax, g))]
            }
            Op::ConcatChannels(a, b) => {
                let (n, ca, h, w) = val(*a).dims4()?;
                let cb = val(*b).shape()[1];
                let plane = h * w;
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * cb * plane);
                for chunk in g.data().chunks((ca + cb) * plane) {
                    ga.extend_from_slice(&chunk[..ca * plane]);
                    gb.extend_from_slice(&chunk[ca * plane..]);
                }
                vec![
                    (*a, Tensor::from_parts(val(*a).shape().to_vec(), ga)),
                    (*b, Tensor::from_parts(val(*b).shape().to_vec(), gb)),
                ]
            }
            Op::GlobalAvgPool(a) => {
                let (_, _, h, w) = val(*a).dims4()?;
                let plane = h * w;
                let scale = 1.0 / plane as f64;
                let data = g.data().iter().flat_map(|&gv| std::iter::repeat(gv * scale).take(plane)).collect();
                vec![(*a, Tensor::from_parts(val(*a).shape().to_vec(), data))]
            }
            Op::Linear { x, w, b } => {
                let (n, fin) = val(*x).dims2()?;
                let fout = val(*w).shape()[0];
                let (xd, wd, gd) = (val(*x).data(), val(*w).data(), g.data());
                let mut dx = vec![0.0; n * fin];
                let mut dw = vec![0.0; fout * fin];
                let mut db = vec![0.0; fout];
                for i in 0..n {
                    for o in 0..fout {
                        let gv = gd[i * fout + o];
                        db[o] += gv;
                        for k in 0..fin {
                            dx[i * fin + k] += gv * wd[o * fin + k];
                            dw[o * fin + k] += gv * xd[i * fin + k];
                        }
                    }
                }
                vec![
                    (*x, Tensor::from_parts(vec![n, fin], dx)),
                    (*w, Tensor::from_parts(vec![fout, fin], dw)),
                    (*b, Tensor::from_parts(vec![fout], db)),
                ]
            }
            Op::SoftmaxCrossEntropy { logits, probs, labels } => {
                let (n, c, h, w) = val(*logits).dims4()?;
                let plane = h * w;
                let scale = g.item() / (n * plane) as f64;
                let mut d: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (pix, &label) in labels.iter().enumerate() {
                    let (i, q) = (pix / plane, pix % plane);
                    d[(i * c + label) * plane + q] -= scale;
                }
                vec![(*logits, Tensor::from_parts(vec![n, c, h, w], d))]
            }
            Op::Mse(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let scale = 2.0 * g.item() / av.len() as f64;
                let da: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| scale * (x - y)).collect();
                let db = da.iter().map(|v| -v).collect();
                vec![
                    (*a, Tensor::from_parts(av.shape().to_vec(), da)),
                    (*b, Tensor::from_parts(bv.shape().to_vec(), db)),
                ]
            }
            Op::BceWithLogits { logits, targets } => {
                let z = val(*logits);
                let scale = g.item() / z.len() as f64;
                let d = z.data().iter().zip(targets).map(|(&zv, &t)| (sigmoid(zv) - t) * scale).collect();
                vec![(*logits, Tensor::from_parts(z.shape().to_vec(), d))]
            }
            Op::Custom { inputs, f } => {
                let refs: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
                inputs
                    .iter()
                    .zip(f.backward(&refs, out, g))
                    .filter_map(|(&i, gi)| gi.map(|t| (i, t)))
                    .collect()
            }
        })
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_finite(t: &Tensor, op: &str) -> Result<()> {
    if t.all_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { context: format!("output of {op}") })
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &str) -> Result<()> {
    contract!(
        a.shape() == b.shape(),
        "{op}: shape mismatch {:?} vs {:?}",
        a.shape(),
        b.shape()
    );
    Ok(())
}

/// Gradients produced by [`Tape::backward`], indexed by tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when `v` does not require grad or is unreachable from the loss.
    pub fn get(&self, v: Var<'_>) -> Option<&Tensor> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub fn get_or_zeros(&self, v: Var<'_>) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(v.value().shape()))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    /// Scalar value of a one-element node.
    pub fn item(&self) -> f64 {
        self.value().item()
    }

    fn same_tape(&self, other: Var<'t>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    fn binary(self, other: Var<'t>, name: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var<'t>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, name)?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::from_parts(a.shape().to_vec(), data);
        check_finite(&out, name)?;
        Ok(self.tape.push_op(out, op))
    }

    fn unary(self, name: &str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var<'t>> {
        let out = self.value().map(f);
        check_finite(&out, name)?;
        Ok(self.tape.push_op(out, op))
    }

    pub fn elementwise(self, kind: Elementwise, other: Option<Var<'t>>) -> Result<Var<'t>> {
        let need = |o: Option<Var<'t>>| {
            o.ok_or_else(|| Error::Contract(format!("{kind:?} needs a second operand")))
        };
        match kind {
            Elementwise::Add => self.add(need(other)?),
            Elementwise::Sub => self.sub(need(other)?),
            Elementwise::Mul => self.mul(need(other)?),
            Elementwise::Relu => self.relu(),
            Elementwise::Sigmoid => self.sigmoid(),
            Elementwise::Scale(k) => self.scale(k),
        }
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn scale(self, k: f64) -> Result<Var<'t>> {
        self.unary("scale", |x| x * k, Op::Scale(self.id, k))
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary("relu", |x| x.max(0.0), Op::Relu(self.id))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary("sigmoid", sigmoid, Op::Sigmoid(self.id))
    }

    /// Gradient reversal: identity forward, `-lambda` times the upstream
    /// gradient backward.
    pub fn grl(self, lambda: f64) -> Result<Var<'t>> {
        contract!(lambda >= 0.0, "grl factor must be >= 0, got {lambda}");
        let out = (*self.value()).clone();
        Ok(self.tape.push_op(out, Op::Grl(self.id, lambda)))
    }

    pub fn sum(self) -> Result<Var<'t>> {
        let s = self.value().data().iter().sum();
        self.unary_scalar("sum", s, Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let v = self.value();
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.unary_scalar("mean", s, Op::Mean(self.id))
    }

    fn unary_scalar(self, name: &str, s: f64, op: Op) -> Result<Var<'t>> {
        let out = Tensor::scalar(s);
        check_finite(&out, name)?;
        Ok(self.tape.push_op(out, op))
    }

    /// Cross-correlation of an NCHW input with an OIHW weight plus bias.
    pub fn conv2d(self, w: Var<'t>, b: Var<'t>, spec: &ConvSpec) -> Result<Var<'t>> {
        let out = kernels::conv2d_forward(&self.value(), &w.value(), &b.value(), spec, self.tape.exec)?;
        check_finite(&out, "conv2d")?;
        Ok(self.tape.push_op(out, Op::Conv2d { x: self.id, w: w.id, b: b.id, spec: *spec }))
    }

    /// Transposed convolution with an IOHW weight.
    pub fn up_conv2d(self, w: Var<'t>, b: Option<Var<'t>>, spec: &ConvSpec) -> Result<Var<'t>> {
        let bias = b.map(|b| b.value());
        let out =
            kernels::conv_transpose2d_forward(&self.value(), &w.value(), bias.as_deref(), spec, self.tape.exec)?;
        check_finite(&out, "up_conv2d")?;
        Ok(self.tape.push_op(
            out,
            Op::ConvTranspose2d { x: self.id, w: w.id, b: b.map(|b| b.id), spec: *spec },
        ))
    }

    pub fn max_pool2d(self) -> Result<Var<'t>> {
        let (out, argmax) = kernels::max_pool2x2_forward(&self.value(), self.tape.exec)?;
        Ok(self.tape.push_op(out, Op::MaxPool2x2 { x: self.id, argmax }))
    }

    /// Concatenates two NCHW tensors along the channel axis (`self` first).
    pub fn concat_channels(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        let (n, ca, h, w) = a.dims4()?;
        let (nb, cb, hb, wb) = b.dims4()?;
        contract!(
            (n, h, w) == (nb, hb, wb),
            "concat_channels: {:?} vs {:?} differ outside the channel axis",
            a.shape(),
            b.shape()
        );
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (ca + cb) * plane);
        for i in 0..n {
            data.extend_from_slice(&a.data()[i * ca * plane..(i + 1) * ca * plane]);
            data.extend_from_slice(&b.data()[i * cb * plane..(i + 1) * cb * plane]);
        }
        let out = Tensor::from_parts(vec![n, ca + cb, h, w], data);
        Ok(self.tape.push_op(out, Op::ConcatChannels(self.id, other.id)))
    }

    /// Mean over H×W: N×C×H×W → N×C.
    pub fn global_avg_pool(self) -> Result<Var<'t>> {
        let v = self.value();
        let (n, c, h, w) = v.dims4()?;
        let plane = (h * w) as f64;
        let data = v.data().chunks(h * w).map(|p| p.iter().sum::<f64>() / plane).collect();
        Ok(self.tape.push_op(Tensor::from_parts(vec![n, c], data), Op::GlobalAvgPool(self.id)))
    }

    /// `x · wᵀ + b` for `x: N×in`, `w: out×in`, `b: out`.
    pub fn linear(self, w: Var<'t>, b: Var<'t>) -> Result<Var<'t>> {
        let (x, wv, bv) = (self.value(), w.value(), b.value());
        let (n, fin) = x.dims2()?;
        let (fout, win) = wv.dims2()?;
        contract!(win == fin, "linear: input width {fin}, weight expects {win}");
        contract!(bv.shape() == [fout], "linear: bias shape {:?}, want [{fout}]", bv.shape());
        let mut data = Vec::with_capacity(n * fout);
        for i in 0..n {
            let row = &x.data()[i * fin..(i + 1) * fin];
            for o in 0..fout {
                let wr = &wv.data()[o * fin..(o + 1) * fin];
                data.push(bv.data()[o] + row.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>());
            }
        }
        let out = Tensor::from_parts(vec![n, fout], data);
        check_finite(&out, "linear")?;
        Ok(self.tape.push_op(out, Op::Linear { x: self.id, w: w.id, b: b.id }))
    }

    /// Mean over all pixels of `-log softmax(logits)[label]`. `labels` is an
    /// N×H×W class map in row-major order.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Result<Var<'t>> {
        let z = self.value();
        let (n, c, h, w) = z.dims4()?;
        contract!(c >= 2, "cross-entropy needs at least 2 classes, got {c}");
        let plane = h * w;
        contract!(
            labels.len() == n * plane,
            "label map has {} entries, logits need {}",
            labels.len(),
            n * plane
        );
        if let Some(bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Contract(format!("label {bad} out of range for {c} classes")));
        }
        let mut probs = vec![0.0; z.len()];
        let mut total = 0.0;
        for (pix, &label) in labels.iter().enumerate() {
            let (i, q) = (pix / plane, pix % plane);
            let at = |k: usize| (i * c + k) * plane + q;
            let m = (0..c).map(|k| z.data()[at(k)]).fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for k in 0..c {
                let e = (z.data()[at(k)] - m).exp();
                probs[at(k)] = e;
                s += e;
            }
            for k in 0..c {
                probs[at(k)] /= s;
            }
            total += s.ln() + m - z.data()[at(label)];
        }
        let out = Tensor::scalar(total / (n * plane) as f64);
        check_finite(&out, "softmax_cross_entropy")?;
        Ok(self.tape.push_op(
            out,
            Op::SoftmaxCrossEntropy { logits: self.id, probs, labels: labels.to_vec() },
        ))
    }

    /// Mean squared difference.
    pub fn mse(self, other: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other);
        let (a, b) = (self.value(), other.value());
        same_shape(&a, &b, "mse")?;
        let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let out = Tensor::scalar(s / a.len() as f64);
        check_finite(&out, "mse")?;
        Ok(self.tape.push_op(out, Op::Mse(self.id, other.id)))
    }

    /// Mean binary cross-entropy of logits against 0/1 targets.
    pub fn bce_with_logits(self, targets: &[f64]) -> Result<Var<'t>> {
        let z = self.value();
        contract!(
            targets.len() == z.len(),
            "bce: {} targets for {} logits",
            targets.len(),
            z.len()
        );
        let s: f64 = z
            .data()
            .iter()
            .zip(targets)
            .map(|(&zv, &t)| zv.max(0.0) - zv * t + (-zv.abs()).exp().ln_1p())
            .sum();
        let out = Tensor::scalar(s / z.len() as f64);
        check_finite(&out, "bce_with_logits")?;
        Ok(self.tape.push_op(out, Op::BceWithLogits { logits: self.id, targets: targets.to_vec() }))
    }
}
