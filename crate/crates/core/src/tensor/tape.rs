//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its output value and, when any
//! input is tracked, what the backward pass needs. Node order is a
//! topological order of the computation, so `backward` is a single reverse
//! sweep.

use std::fmt;

use super::batch_norm::{self, BatchNormState, BnSaved};
use super::kernels::{self, ConvGeom};
use super::Tensor;
use crate::error::{dim_err, Error, Result};
use crate::scalar::{gemm, MatRef, Scalar};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddScalar(Var),
    MulScalar(Var, T),
    BroadcastMul(Var, Var),
    BroadcastDiv(Var, Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Sum(Var),
    SumTrailing(Var),
    Relu(Var),
    Sigmoid(Var),
    BceLogits(Var, Var),
    Softmax(Var, usize),
    MatMul(Var, Var),
    Bmm(Var, Var),
    Conv2d { x: Var, w: Var, bias: Option<Var>, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, saved: BnSaved<T> },
    Resize { x: Var, from: (usize, usize) },
    AvgPool { x: Var, k: usize, stride: usize, pad: usize },
}

struct Node<T> {
    value: Tensor<T>,
    tracked: bool,
    op: Op<T>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    recording: bool,
    checked: bool,
    leaf_grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.nodes.len())
            .field("recording", &self.recording)
            .field("checked", &self.checked)
            .finish()
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return dim_err(format!("{op}: shapes {:?} and {:?} differ", a, b));
    }
    Ok(())
}

fn add_into<T: Scalar>(dst: &mut Option<Vec<T>>, src: Vec<T>) {
    match dst {
        Some(d) => d.iter_mut().zip(src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src),
    }
}

impl<T: Scalar> Tape<T> {
    /// A recording tape: tracked leaves produce tracked outputs.
    pub fn new() -> Self {
        Self { nodes: Vec::new(), recording: true, checked: false, leaf_grads: Vec::new() }
    }

    /// A tape that never tracks gradients (evaluation).
    pub fn inference() -> Self {
        Self { recording: false, ..Self::new() }
    }

    /// Checked mode: every op verifies its output is finite.
    pub fn checked(mut self) -> Self {
        self.checked = true;
        self
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        let tracked = requires_grad && self.recording;
        self.nodes.push(Node { value, tracked, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Copy of `v` with no gradient linkage.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, inputs: &[Var], op: Op<T>) -> Result<Var> {
        if self.checked && !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let tracked = self.recording && inputs.iter().any(|v| self.nodes[v.0].tracked);
        let op = if tracked { op } else { Op::Leaf };
        self.nodes.push(Node { value, tracked, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn zip_map(&self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape(name, ta.shape(), tb.shape())?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "add", |x, y| x + y)?;
        self.push("add", v, &[a, b], Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "sub", |x, y| x - y)?;
        self.push("sub", v, &[a, b], Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "mul", |x, y| x * y)?;
        self.push("mul", v, &[a, b], Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_map(a, b, "div", |x, y| x / y)?;
        self.push("div", v, &[a, b], Op::Div(a, b))
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.value(a).map(|x| x + s);
        self.push("add_scalar", v, &[a], Op::AddScalar(a))
    }

    pub fn mul_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        let v = self.value(a).map(|x| x * s);
        self.push("mul_scalar", v, &[a], Op::MulScalar(a, s))
    }

    /// Block size over which each element of `b` is repeated.
    fn broadcast_inner(&self, a: Var, b: Var) -> Result<usize> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let nb: usize = sb.iter().product();
        if nb == 1 || (sb.len() <= sa.len() && sa[..sb.len()] == *sb) {
            Ok(self.value(a).numel() / nb)
        } else {
            dim_err(format!("cannot broadcast {:?} over {:?}", sb, sa))
        }
    }

    /// `a * b` where `b` is a single value or a leading-shape prefix of `a`.
    pub fn broadcast_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let inner = self.broadcast_inner(a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().enumerate().map(|(i, &x)| x * tb.data()[i / inner]).collect();
        let v = Tensor::new(ta.shape(), data)?;
        self.push("broadcast_mul", v, &[a, b], Op::BroadcastMul(a, b))
    }

    pub fn broadcast_div(&mut self, a: Var, b: Var) -> Result<Var> {
        let inner = self.broadcast_inner(a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().enumerate().map(|(i, &x)| x / tb.data()[i / inner]).collect();
        let v = Tensor::new(ta.shape(), data)?;
        self.push("broadcast_div", v, &[a, b], Op::BroadcastDiv(a, b))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        self.push("reshape", v, &[a], Op::Reshape(a))
    }

    /// Flattens everything after the leading `keep` axes into one axis.
    pub fn flatten_from(&mut self, a: Var, keep: usize) -> Result<Var> {
        let s = self.shape(a);
        if keep >= s.len() {
            return dim_err(format!("flatten_from({keep}) on shape {:?}", s));
        }
        let mut shape = s[..keep].to_vec();
        shape.push(s[keep..].iter().product());
        self.reshape(a, &shape)
    }

    pub fn permute(&mut self, a: Var, perm: &[usize]) -> Result<Var> {
        let t = self.value(a);
        kernels::check_perm(t.shape(), perm)?;
        let (shape, data) = kernels::permute(t.shape(), t.data(), perm);
        let v = Tensor::new(&shape, data)?;
        self.push("permute", v, &[a], Op::Permute(a, perm.to_vec()))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let r = self.shape(a).len();
        if r < 2 {
            return dim_err("transpose needs rank >= 2");
        }
        let mut perm: Vec<usize> = (0..r).collect();
        perm.swap(r - 2, r - 1);
        self.permute(a, &perm)
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self.shape(*parts.first().ok_or_else(|| Error::Contract("concat of nothing".into()))?).to_vec();
        if axis >= first.len() {
            return dim_err(format!("concat axis {axis} for shape {:?}", first));
        }
        let mut shape = first.clone();
        shape[axis] = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != first.len() || s.iter().enumerate().any(|(i, &d)| i != axis && d != first[i]) {
                return dim_err(format!("concat shapes {:?} and {:?} along axis {axis}", first, s));
            }
            shape[axis] += s[axis];
        }
        let outer: usize = first[..axis].iter().product();
        let mut data = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &p in parts {
                let t = self.value(p);
                let chunk = t.numel() / outer;
                data.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let v = Tensor::new(&shape, data)?;
        self.push("concat", v, parts, Op::Concat(parts.to_vec(), axis))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), &[a], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).numel();
        let s = self.sum(a)?;
        self.mul_scalar(s, T::lit(1.0 / n as f64))
    }

    /// Sums over every axis after the first `keep`.
    pub fn sum_trailing(&mut self, a: Var, keep: usize) -> Result<Var> {
        let t = self.value(a);
        if keep == 0 || keep > t.rank() {
            return dim_err(format!("sum_trailing({keep}) on shape {:?}", t.shape()));
        }
        let shape = t.shape()[..keep].to_vec();
        let outer: usize = shape.iter().product();
        let inner = t.numel() / outer;
        let data = t.data().chunks(inner.max(1)).take(outer).map(|c| c.iter().copied().sum()).collect();
        let v = Tensor::new(&shape, data)?;
        self.push("sum_trailing", v, &[a], Op::SumTrailing(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        self.push("relu", v, &[a], Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).map(sigmoid);
        self.push("sigmoid", v, &[a], Op::Sigmoid(a))
    }

    /// Elementwise binary cross-entropy of `sigmoid(logits)` against `target`.
    /// Gradients flow to `logits` only.
    pub fn bce_with_logits(&mut self, logits: Var, target: Var) -> Result<Var> {
        let v = self
            .zip_map(logits, target, "bce_with_logits", |x, g| x.max(T::zero()) - x * g + (-x.abs()).exp().ln_1p())?;
        self.push("bce_with_logits", v, &[logits], Op::BceLogits(logits, target))
    }

    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let t = self.value(a);
        if axis >= t.rank() {
            return dim_err(format!("softmax axis {axis} for shape {:?}", t.shape()));
        }
        let (outer, n, inner) = kernels::axis_split(t.shape(), axis);
        let v = Tensor::new(t.shape(), kernels::softmax_forward(t.data(), outer, n, inner))?;
        self.push("softmax", v, &[a], Op::Softmax(a, axis))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return dim_err(format!("matmul of {:?} and {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        gemm(MatRef::new(self.value(a).data(), m, k), MatRef::new(self.value(b).data(), k, n), &mut out, false);
        let v = Tensor::new(&[m, n], out)?;
        self.push("matmul", v, &[a, b], Op::MatMul(a, b))
    }

    /// Batched matmul `[B,m,k]·[B,k,n] → [B,m,n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return dim_err(format!("bmm of {:?} and {:?}", sa, sb));
        }
        let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
        let mut out = vec![T::zero(); bs * m * n];
        let (da, db) = (self.value(a).data(), self.value(b).data());
        for i in 0..bs {
            gemm(
                MatRef::new(&da[i * m * k..(i + 1) * m * k], m, k),
                MatRef::new(&db[i * k * n..(i + 1) * k * n], k, n),
                &mut out[i * m * n..(i + 1) * m * n],
                false,
            );
        }
        let v = Tensor::new(&[bs, m, n], out)?;
        self.push("bmm", v, &[a, b], Op::Bmm(a, b))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(x), self.shape(w), stride, pad)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.cout] {
                return dim_err(format!("conv2d bias {:?} for {} output channels", self.shape(b), geom.cout));
            }
        }
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            bias.map(|b| self.value(b).data()),
        );
        let v = Tensor::new(&geom.out_shape(), out)?;
        let mut inputs = vec![x, w];
        inputs.extend(bias);
        self.push("conv2d", v, &inputs, Op::Conv2d { x, w, bias, geom })
    }

    /// Per-channel normalization of `[B, C, ...]` input.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        state: &mut BatchNormState<T>,
        training: bool,
    ) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return dim_err(format!("batch_norm input {:?} lacks a channel axis", s));
        }
        let c = s[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] || state.channels() != c {
            return dim_err(format!("batch_norm affine/state size for {c} channels"));
        }
        let dims = (s[0], c, s[2..].iter().product());
        let (y, saved) = batch_norm::forward(
            self.value(x).data(),
            dims,
            self.value(gamma).data(),
            self.value(beta).data(),
            state,
            training,
        )?;
        let v = Tensor::new(&s, y)?;
        self.push("batch_norm", v, &[x, gamma, beta], Op::BatchNorm { x, gamma, beta, saved })
    }

    /// Bilinear upsampling of `[B,C,H,W]` by an integer factor.
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor < 1 {
            return Err(Error::Parameter("upsample factor must be >= 1".into()));
        }
        let s = self.shape(x);
        if s.len() != 4 {
            return dim_err(format!("upsample expects [B,C,H,W], got {:?}", s));
        }
        if factor == 1 {
            let v = self.value(x).clone();
            return self.push("upsample", v, &[x], Op::Reshape(x));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let out = kernels::resize_bilinear_forward(self.value(x).data(), b * c, (h, w), (h * factor, w * factor));
        let v = Tensor::new(&[b, c, h * factor, w * factor], out)?;
        self.push("upsample", v, &[x], Op::Resize { x, from: (h, w) })
    }

    pub fn avg_pool(&mut self, x: Var, k: usize, stride: usize, pad: usize) -> Result<Var> {
        if k.is_multiple_of(2) {
            return Err(Error::Parameter(format!("avg_pool window must be odd, got {k}")));
        }
        if stride == 0 {
            return Err(Error::Parameter("avg_pool stride must be positive".into()));
        }
        let s = self.shape(x);
        if s.len() != 4 {
            return dim_err(format!("avg_pool expects [B,C,H,W], got {:?}", s));
        }
        let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo, out) = kernels::avg_pool_forward(self.value(x).data(), b * c, h, w, k, stride, pad)?;
        let v = Tensor::new(&[b, c, ho, wo], out)?;
        self.push("avg_pool", v, &[x], Op::AvgPool { x, k, stride, pad })
    }

    /// Gradient of the leaf `v` accumulated by `backward`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    /// Accumulates d`loss`/d`leaf` for every tracked leaf.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.recording {
            return Err(Error::State("backward on a tape that is not recording".into()));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!("backward needs a scalar loss, got {:?}", self.shape(loss))));
        }
        if !self.is_tracked(loss) {
            return Err(Error::State("loss does not depend on any tracked value".into()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize_with(self.nodes.len(), || None);
        }
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if let Op::Leaf = node.op {
                let shape = node.value.shape();
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                    slot @ None => *slot = Some(Tensor::new(shape, g)?),
                }
                continue;
            }
            for (parent, pg) in self.backward_node(node, &g)? {
                if self.nodes[parent.0].tracked {
                    add_into(&mut grads[parent.0], pg);
                }
            }
        }
        Ok(())
    }

    fn val(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn backward_node(&self, node: &Node<T>, g: &[T]) -> Result<Vec<(Var, Vec<T>)>> {
        let zip = |a: &[T], f: &dyn Fn(T, T) -> T| -> Vec<T> { g.iter().zip(a).map(|(&x, &y)| f(x, y)).collect() };
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::Sub(a, b) => vec![(*a, g.to_vec()), (*b, g.iter().map(|&x| -x).collect())],
            Op::Mul(a, b) => vec![(*a, zip(self.val(*b), &|x, y| x * y)), (*b, zip(self.val(*a), &|x, y| x * y))],
            Op::Div(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let ga = zip(vb, &|x, y| x / y);
                let gb = g.iter().zip(va.iter().zip(vb)).map(|(&gi, (&x, &y))| -gi * x / (y * y)).collect();
                vec![(*a, ga), (*b, gb)]
            }
            Op::AddScalar(a) | Op::Reshape(a) => vec![(*a, g.to_vec())],
            Op::MulScalar(a, s) => vec![(*a, g.iter().map(|&x| x * *s).collect())],
            Op::BroadcastMul(a, b) | Op::BroadcastDiv(a, b) => {
                let (va, vb) = (self.val(*a), self.val(*b));
                let inner = va.len() / vb.len();
                let div = matches!(node.op, Op::BroadcastDiv(..));
                let mut ga = vec![T::zero(); va.len()];
                let mut gb = vec![T::zero(); vb.len()];
                for (i, (&gi, &x)) in g.iter().zip(va).enumerate() {
                    let j = i / inner;
                    if div {
                        ga[i] = gi / vb[j];
                        gb[j] -= gi * x / (vb[j] * vb[j]);
                    } else {
                        ga[i] = gi * vb[j];
                        gb[j] += gi * x;
                    }
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Permute(a, perm) => {
                let (_, ga) = kernels::permute(node.value.shape(), g, &kernels::inverse_perm(perm));
                vec![(*a, ga)]
            }
            Op::Concat(parts, axis) => {
                let outer: usize = node.value.shape()[..*axis].iter().product();
                let mut grads: Vec<Vec<T>> = parts.iter().map(|p| Vec::with_capacity(self.val(*p).len())).collect();
                let mut off = 0;
                for _ in 0..outer {
                    for (pi, p) in parts.iter().enumerate() {
                        let chunk = self.val(*p).len() / outer;
                        grads[pi].extend_from_slice(&g[off..off + chunk]);
                        off += chunk;
                    }
                }
                parts.iter().copied().zip(grads).collect()
            }
            Op::Sum(a) => vec![(*a, vec![g[0]; self.val(*a).len()])],
            Op::SumTrailing(a) => {
                let n = self.val(*a).len();
                let inner = n / g.len();
                vec![(*a, (0..n).map(|i| g[i / inner]).collect())]
            }
            Op::Relu(a) => vec![(*a, zip(self.val(*a), &|gi, x| if x > T::zero() { gi } else { T::zero() }))],
            Op::Sigmoid(a) => {
                let y = node.value.data();
                vec![(*a, zip(y, &|gi, y| gi * y * (T::one() - y)))]
            }
            Op::BceLogits(x, t) => {
                let (vx, vt) = (self.val(*x), self.val(*t));
                let gx = g.iter().zip(vx.iter().zip(vt)).map(|(&gi, (&x, &t))| gi * (sigmoid(x) - t)).collect();
                vec![(*x, gx)]
            }
            Op::Softmax(a, axis) => {
                let (outer, n, inner) = kernels::axis_split(node.value.shape(), *axis);
                vec![(*a, kernels::softmax_backward(node.value.data(), g, outer, n, inner))]
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let gm = MatRef::new(g, m, n);
                let mut res = Vec::new();
                if self.wants(*a) {
                    let mut ga = vec![T::zero(); m * k];
                    gemm(gm, MatRef::new(self.val(*b), k, n).t(), &mut ga, false);
                    res.push((*a, ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![T::zero(); k * n];
                    gemm(MatRef::new(self.val(*a), m, k).t(), gm, &mut gb, false);
                    res.push((*b, gb));
                }
                res
            }
            Op::Bmm(a, b) => {
                let (sa, sb) = (self.nodes[a.0].value.shape(), self.nodes[b.0].value.shape());
                let (bs, m, k, n) = (sa[0], sa[1], sa[2], sb[2]);
                let (va, vb) = (self.val(*a), self.val(*b));
                let mut ga = self.wants(*a).then(|| vec![T::zero(); bs * m * k]);
                let mut gb = self.wants(*b).then(|| vec![T::zero(); bs * k * n]);
                for i in 0..bs {
                    let gm = MatRef::new(&g[i * m * n..(i + 1) * m * n], m, n);
                    if let Some(ga) = ga.as_mut() {
                        let bm = MatRef::new(&vb[i * k * n..(i + 1) * k * n], k, n);
                        gemm(gm, bm.t(), &mut ga[i * m * k..(i + 1) * m * k], false);
                    }
                    if let Some(gb) = gb.as_mut() {
                        let am = MatRef::new(&va[i * m * k..(i + 1) * m * k], m, k);
                        gemm(am.t(), gm, &mut gb[i * k * n..(i + 1) * k * n], false);
                    }
                }
                let mut res = Vec::new();
                res.extend(ga.map(|v| (*a, v)));
                res.extend(gb.map(|v| (*b, v)));
                res
            }
            Op::Conv2d { x, w, bias, geom } => {
                let (dx, dw, db) =
                    kernels::conv2d_backward(geom, self.val(*x), self.val(*w), g, self.wants(*x), self.wants(*w));
                let mut res = Vec::new();
                res.extend(dx.map(|v| (*x, v)));
                res.extend(dw.map(|v| (*w, v)));
                if let Some(b) = bias {
                    res.push((*b, db));
                }
                res
            }
            Op::BatchNorm { x, gamma, beta, saved } => {
                let s = node.value.shape();
                let dims = (s[0], s[1], s[2..].iter().product());
                let (dx, dg, db) = batch_norm::backward(g, dims, self.val(*gamma), saved);
                vec![(*x, dx), (*gamma, dg), (*beta, db)]
            }
            Op::Resize { x, from } => {
                let s = node.value.shape();
                let gx = kernels::resize_bilinear_backward(g, s[0] * s[1], *from, (s[2], s[3]));
                vec![(*x, gx)]
            }
            Op::AvgPool { x, k, stride, pad } => {
                let s = self.nodes[x.0].value.shape();
                let gx = kernels::avg_pool_backward(g, s[0] * s[1], s[2], s[3], *k, *stride, *pad)?;
                vec![(*x, gx)]
            }
        };
        Ok(out)
    }
}

#[inline]
pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}
