//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in execution order, so the tape is
//! topologically sorted by construction and [`Graph::backward`] is a single
//! reverse sweep.

use super::kernels::{self, ConvGeom, Padding};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

/// Stride, border handling and grouping of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: Padding,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self { stride: 1, padding: Padding::Zero, groups: 1 }
    }
}

impl Conv2dSpec {
    pub fn same() -> Self {
        Self::default()
    }

    pub fn valid() -> Self {
        Self { padding: Padding::Valid, ..Self::default() }
    }

    pub fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: usize, w: usize, b: Option<usize>, spec: Conv2dSpec },
    ConvTranspose2d { x: usize, w: usize, b: Option<usize>, stride: usize },
    MaxPool2d { x: usize, argmax: Vec<usize> },
    Relu(usize),
    Sigmoid(usize),
    Softplus(usize),
    Binary { a: usize, b: usize, kind: BinaryKind },
    Square(usize),
    AddScalar(usize),
    MulScalar(usize, T),
    AddChannel { a: usize, v: usize },
    Concat { a: usize, b: usize },
    Mean(usize),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv_transpose2d",
            Op::MaxPool2d { .. } => "max_pool2d",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Binary { kind: BinaryKind::Add, .. } => "add",
            Op::Binary { kind: BinaryKind::Sub, .. } => "sub",
            Op::Binary { kind: BinaryKind::Mul, .. } => "mul",
            Op::Binary { kind: BinaryKind::Div, .. } => "div",
            Op::Square(_) => "square",
            Op::AddScalar(_) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::AddChannel { .. } => "add_channel",
            Op::Concat { .. } => "concat_channels",
            Op::Mean(_) => "reduce_mean",
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } => {
                let mut v = vec![x, w];
                v.extend(b);
                v
            }
            Op::MaxPool2d { x, .. } => vec![x],
            Op::Relu(a) | Op::Sigmoid(a) | Op::Softplus(a) | Op::Square(a) | Op::AddScalar(a) | Op::Mean(a) => {
                vec![a]
            }
            Op::MulScalar(a, _) => vec![a],
            Op::Binary { a, b, .. } | Op::Concat { a, b } => vec![a, b],
            Op::AddChannel { a, v } => vec![a, v],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation: values, op records and gradient buffers.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softplus_scalar<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(t, false)
    }

    /// Leaf that receives a gradient on [`Graph::backward`].
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push_leaf(t, true)
    }

    fn push_leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last [`Graph::backward`] target with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let buf = self.grads[v.0].as_ref()?;
        Some(Tensor::new(self.nodes[v.0].value.shape(), buf.clone()).expect("grad matches value shape"))
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    /// Chain of op names leading to `id` along first inputs, most recent last.
    fn trace(&self, id: usize) -> String {
        let mut chain = vec![self.nodes[id].op.name()];
        let mut cur = id;
        for _ in 0..16 {
            match self.nodes[cur].op.inputs().first() {
                Some(&prev) => {
                    chain.push(self.nodes[prev].op.name());
                    cur = prev;
                }
                None => break,
            }
        }
        chain.reverse();
        chain.join(" -> ")
    }

    /// First node holding a NaN or infinity, reported with its op trace.
    pub fn check_finite(&self) -> Result<()> {
        for (i, n) in self.nodes.iter().enumerate() {
            if !n.value.is_finite() {
                return Err(Error::NonFinite { op: n.op.name().to_string(), trace: self.trace(i) });
            }
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        let inputs = op.inputs();
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        if cfg!(debug_assertions)
            && !value.is_finite()
            && inputs.iter().all(|&i| self.nodes[i].value.is_finite())
        {
            self.nodes.push(Node { value, op, requires_grad });
            let id = self.nodes.len() - 1;
            let err = Error::NonFinite { op: self.nodes[id].op.name().to_string(), trace: self.trace(id) };
            self.nodes.pop();
            return Err(err);
        }
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Ok(Var(self.nodes.len() - 1))
    }

    // ---------------------------------------------------------------- ops

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, spec: Conv2dSpec) -> Result<Var> {
        const OP: &str = "conv2d";
        let (n, cin, h, wd) = self.value(x).dims4(OP)?;
        let (cout, cin_g, k, k2) = self.value(w).dims4(OP)?;
        if k != k2 {
            return Err(Error::shape(OP, format!("kernel must be square, got {k}x{k2}")));
        }
        if spec.stride == 0 {
            return Err(Error::Config("conv2d stride must be >= 1".into()));
        }
        if spec.padding != Padding::Valid && k % 2 == 0 {
            return Err(Error::shape(OP, format!("same padding needs an odd kernel, got k={k}")));
        }
        let groups = spec.groups;
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::shape(OP, format!("groups={groups} must divide Cin={cin} and Cout={cout}")));
        }
        if cin_g * groups != cin {
            return Err(Error::shape(
                OP,
                format!("Cin: input has {cin} channels, kernel expects {} ({cin_g} per group x {groups})", cin_g * groups),
            ));
        }
        let p = spec.padding.amount(k);
        let (hp, wp) = (h + 2 * p, wd + 2 * p);
        if hp < k || wp < k {
            return Err(Error::shape(OP, format!("H/W: padded input {hp}x{wp} smaller than kernel {k}")));
        }
        let bias = match b {
            Some(b) => {
                let bv = self.value(b);
                if bv.shape() != [cout] {
                    return Err(Error::shape(OP, format!("Cout: bias shape {:?}, expected [{cout}]", bv.shape())));
                }
                Some(bv.data().to_vec())
            }
            None => None,
        };
        let geom = ConvGeom::new(n, cin, cout, groups, k, spec.stride, hp, wp);
        let xp = kernels::pad_planes(self.value(x).data(), n * cin, h, wd, p, spec.padding);
        let mut out = kernels::broadcast_bias(bias.as_deref(), n, cout, geom.ho * geom.wo);
        kernels::correlate(&xp, self.value(w).data(), &geom, &mut out);
        let value = Tensor::new(&[n, cout, geom.ho, geom.wo], out)?;
        self.push(value, Op::Conv2d { x: x.0, w: w.0, b: b.map(|v| v.0), spec })
    }

    /// Transposed convolution with kernel `[Cin, Cout, k, k]`; output is
    /// exactly `stride` times the input extent.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let (n, cin, h, wd) = self.value(x).dims4(OP)?;
        let (wcin, cout, k, k2) = self.value(w).dims4(OP)?;
        if k != k2 {
            return Err(Error::shape(OP, format!("kernel must be square, got {k}x{k2}")));
        }
        if !(stride == 1 || stride == 2) || k < stride || (k - stride) % 2 != 0 {
            return Err(Error::Config(format!(
                "conv_transpose2d supports stride 1 with odd k or stride 2 with even k; got stride={stride}, k={k}"
            )));
        }
        if wcin != cin {
            return Err(Error::shape(OP, format!("Cin: input has {cin} channels, kernel expects {wcin}")));
        }
        let p = (k - stride) / 2;
        let (hp, wp) = ((h - 1) * stride + k, (wd - 1) * stride + k);
        // The transpose of a correlation mapping Cout -> Cin over (hp, wp).
        let geom = ConvGeom::new(n, cout, cin, 1, k, stride, hp, wp);
        let mut full = vec![T::zero(); n * cout * hp * wp];
        kernels::correlate_adjoint_input(self.value(x).data(), self.value(w).data(), &geom, &mut full);
        let (ho, wo) = (h * stride, wd * stride);
        let mut out = kernels::fold_padded_grad(&full, n * cout, ho, wo, p, Padding::Zero);
        if let Some(b) = b {
            let bv = self.value(b);
            if bv.shape() != [cout] {
                return Err(Error::shape(OP, format!("Cout: bias shape {:?}, expected [{cout}]", bv.shape())));
            }
            let plane = ho * wo;
            for bi in 0..n {
                for c in 0..cout {
                    let bc = bv.data()[c];
                    out[(bi * cout + c) * plane..][..plane].iter_mut().for_each(|v| *v += bc);
                }
            }
        }
        let value = Tensor::new(&[n, cout, ho, wo], out)?;
        self.push(value, Op::ConvTranspose2d { x: x.0, w: w.0, b: b.map(|v| v.0), stride })
    }

    /// 2×2 max pooling with stride 2. Ties resolve to the first element in
    /// row-major order.
    pub fn max_pool2d(&mut self, x: Var) -> Result<Var> {
        const OP: &str = "max_pool2d";
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(OP, format!("H/W must be even, got {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for pl in 0..n * c {
            let base = pl * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let cands = [
                        base + 2 * oy * w + 2 * ox,
                        base + 2 * oy * w + 2 * ox + 1,
                        base + (2 * oy + 1) * w + 2 * ox,
                        base + (2 * oy + 1) * w + 2 * ox + 1,
                    ];
                    let mut best = cands[0];
                    for &ci in &cands[1..] {
                        if src[ci] > src[best] {
                            best = ci;
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(&[n, c, ho, wo], out)?;
        self.push(value, Op::MaxPool2d { x: x.0, argmax })
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(x.0))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(sigmoid_scalar);
        self.push(value, Op::Sigmoid(x.0))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).map(softplus_scalar);
        self.push(value, Op::Softplus(x.0))
    }

    /// Elementwise binary op. `b` may also hold a single element, which is
    /// broadcast over `a`.
    pub fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let name = Op::<T>::Binary { a: 0, b: 0, kind }.name();
        let (av, bv) = (self.value(a), self.value(b));
        let scalar_b = bv.numel() == 1 && av.numel() != 1;
        if !scalar_b && av.shape() != bv.shape() {
            return Err(Error::shape(name, format!("operands {:?} and {:?} differ", av.shape(), bv.shape())));
        }
        if kind == BinaryKind::Div {
            if let Some(pos) = bv.data().iter().position(|v| *v == T::zero()) {
                return Err(Error::NumericDomain { op: name, detail: format!("zero denominator at flat index {pos}") });
            }
        }
        let f = |x: T, y: T| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let data = if scalar_b {
            let y = bv.data()[0];
            av.data().iter().map(|&x| f(x, y)).collect()
        } else {
            av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect()
        };
        let value = Tensor::new(av.shape(), data)?;
        self.push(value, Op::Binary { a: a.0, b: b.0, kind })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Mul)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Div)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v * v);
        self.push(value, Op::Square(a.0))
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let value = self.value(a).map(|v| v + c);
        self.push(value, Op::AddScalar(a.0))
    }

    pub fn mul_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        let value = self.value(a).map(|v| v * c);
        self.push(value, Op::MulScalar(a.0, c))
    }

    /// Adds `v[c]` to every element of channel `c` of a `[N, C, H, W]` tensor.
    pub fn add_channel(&mut self, a: Var, v: Var) -> Result<Var> {
        const OP: &str = "add_channel";
        let (n, c, h, w) = self.value(a).dims4(OP)?;
        if self.value(v).shape() != [c] {
            return Err(Error::shape(OP, format!("C: vector shape {:?}, expected [{c}]", self.value(v).shape())));
        }
        let plane = h * w;
        let mut data = self.value(a).data().to_vec();
        let vv = self.value(v).data();
        for b in 0..n {
            for ch in 0..c {
                data[(b * c + ch) * plane..][..plane].iter_mut().for_each(|x| *x += vv[ch]);
            }
        }
        let value = Tensor::new(&[n, c, h, w], data)?;
        self.push(value, Op::AddChannel { a: a.0, v: v.0 })
    }

    /// Channels of `a` followed by channels of `b`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        const OP: &str = "concat_channels";
        let (na, ca, ha, wa) = self.value(a).dims4(OP)?;
        let (nb, cb, hb, wb) = self.value(b).dims4(OP)?;
        if na != nb {
            return Err(Error::shape(OP, format!("N: {na} vs {nb}")));
        }
        if (ha, wa) != (hb, wb) {
            return Err(Error::shape(OP, format!("H/W: {ha}x{wa} vs {hb}x{wb}")));
        }
        let plane = ha * wa;
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(na * (ca + cb) * plane);
        for i in 0..na {
            data.extend_from_slice(&ad[i * ca * plane..(i + 1) * ca * plane]);
            data.extend_from_slice(&bd[i * cb * plane..(i + 1) * cb * plane]);
        }
        let value = Tensor::new(&[na, ca + cb, ha, wa], data)?;
        self.push(value, Op::Concat { a: a.0, b: b.0 })
    }

    /// Arithmetic mean of all elements, as a one-element tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.numel() == 0 {
            return Err(Error::shape("reduce_mean", "empty tensor"));
        }
        let m = av.data().iter().copied().sum::<T>() / T::lit(av.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean(a.0))
    }

    // ------------------------------------------------------------ backward

    fn accumulate(&mut self, id: usize, contrib: Vec<T>) {
        if !self.nodes[id].requires_grad {
            return;
        }
        match &mut self.grads[id] {
            Some(g) => g.iter_mut().zip(contrib).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(contrib),
        }
    }

    /// Reverse sweep from a scalar `loss`, accumulating into gradient
    /// buffers. Call [`Graph::zero_grad`] to reset between passes.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        // Leaf gradients accumulate across passes; intermediate ones do not.
        for (node, grad) in self.nodes.iter().zip(self.grads.iter_mut()) {
            if !matches!(node.op, Op::Leaf) {
                *grad = None;
            }
        }
        self.accumulate(loss.0, vec![T::one()]);
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(gy) = self.grads[id].take() else { continue };
            let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
            self.backprop(id, &op, &gy);
            self.nodes[id].op = op;
            self.grads[id] = Some(gy);
        }
        for id in 0..self.nodes.len() {
            if self.nodes[id].requires_grad && matches!(self.nodes[id].op, Op::Leaf) && self.grads[id].is_none() {
                self.grads[id] = Some(vec![T::zero(); self.nodes[id].value.numel()]);
            }
        }
        Ok(())
    }

    fn backprop(&mut self, id: usize, op: &Op<T>, gy: &[T]) {
        match op {
            Op::Leaf => {}
            &Op::Conv2d { x, w, b, spec } => {
                let (n, cin, h, wd) = self.nodes[x].value.dims4("conv2d").unwrap();
                let (cout, _, k, _) = self.nodes[w].value.dims4("conv2d").unwrap();
                let p = spec.padding.amount(k);
                let geom = ConvGeom::new(n, cin, cout, spec.groups, k, spec.stride, h + 2 * p, wd + 2 * p);
                if self.nodes[x].requires_grad {
                    let mut gxp = vec![T::zero(); n * cin * geom.hp * geom.wp];
                    kernels::correlate_adjoint_input(gy, self.nodes[w].value.data(), &geom, &mut gxp);
                    let gx = kernels::fold_padded_grad(&gxp, n * cin, h, wd, p, spec.padding);
                    self.accumulate(x, gx);
                }
                if self.nodes[w].requires_grad {
                    let xp = kernels::pad_planes(self.nodes[x].value.data(), n * cin, h, wd, p, spec.padding);
                    let mut gw = vec![T::zero(); self.nodes[w].value.numel()];
                    kernels::correlate_adjoint_weight(gy, &xp, &geom, &mut gw);
                    self.accumulate(w, gw);
                }
                if let Some(b) = b {
                    if self.nodes[b].requires_grad {
                        let gb = kernels::channel_sums(gy, n, cout, geom.ho * geom.wo);
                        self.accumulate(b, gb);
                    }
                }
            }
            &Op::ConvTranspose2d { x, w, b, stride } => {
                let (n, cin, h, wd) = self.nodes[x].value.dims4("conv_transpose2d").unwrap();
                let (_, cout, k, _) = self.nodes[w].value.dims4("conv_transpose2d").unwrap();
                let p = (k - stride) / 2;
                let (ho, wo) = (h * stride, wd * stride);
                let geom = ConvGeom::new(n, cout, cin, 1, k, stride, ho + 2 * p, wo + 2 * p);
                let gyp = kernels::pad_planes(gy, n * cout, ho, wo, p, Padding::Zero);
                if self.nodes[x].requires_grad {
                    let mut gx = vec![T::zero(); n * cin * h * wd];
                    kernels::correlate(&gyp, self.nodes[w].value.data(), &geom, &mut gx);
                    self.accumulate(x, gx);
                }
                if self.nodes[w].requires_grad {
                    let mut gw = vec![T::zero(); self.nodes[w].value.numel()];
                    kernels::correlate_adjoint_weight(self.nodes[x].value.data(), &gyp, &geom, &mut gw);
                    self.accumulate(w, gw);
                }
                if let Some(b) = b {
                    if self.nodes[b].requires_grad {
                        let gb = kernels::channel_sums(gy, n, cout, ho * wo);
                        self.accumulate(b, gb);
                    }
                }
            }
            Op::MaxPool2d { x, argmax } => {
                let mut gx = vec![T::zero(); self.nodes[*x].value.numel()];
                for (&src, &g) in argmax.iter().zip(gy) {
                    gx[src] += g;
                }
                self.accumulate(*x, gx);
            }
            &Op::Relu(x) => {
                let gx = self.nodes[x].value.data().iter().zip(gy).map(|(&v, &g)| if v > T::zero() { g } else { T::zero() }).collect();
                self.accumulate(x, gx);
            }
            &Op::Sigmoid(x) => {
                let gx = self.nodes[id].value.data().iter().zip(gy).map(|(&y, &g)| g * y * (T::one() - y)).collect();
                self.accumulate(x, gx);
            }
            &Op::Softplus(x) => {
                let gx = self.nodes[x].value.data().iter().zip(gy).map(|(&v, &g)| g * sigmoid_scalar(v)).collect();
                self.accumulate(x, gx);
            }
            &Op::Binary { a, b, kind } => self.backprop_binary(a, b, kind, gy),
            &Op::Square(a) => {
                let two = T::lit(2.0);
                let ga = self.nodes[a].value.data().iter().zip(gy).map(|(&v, &g)| two * v * g).collect();
                self.accumulate(a, ga);
            }
            &Op::AddScalar(a) => self.accumulate(a, gy.to_vec()),
            &Op::MulScalar(a, c) => self.accumulate(a, gy.iter().map(|&g| g * c).collect()),
            &Op::AddChannel { a, v } => {
                self.accumulate(a, gy.to_vec());
                if self.nodes[v].requires_grad {
                    let (n, c, h, w) = self.nodes[a].value.dims4("add_channel").unwrap();
                    self.accumulate(v, kernels::channel_sums(gy, n, c, h * w));
                }
            }
            &Op::Concat { a, b } => {
                let (n, ca, h, w) = self.nodes[a].value.dims4("concat_channels").unwrap();
                let cb = self.nodes[b].value.shape()[1];
                let plane = h * w;
                let mut ga = Vec::with_capacity(n * ca * plane);
                let mut gb = Vec::with_capacity(n * cb * plane);
                for i in 0..n {
                    let row = &gy[i * (ca + cb) * plane..(i + 1) * (ca + cb) * plane];
                    ga.extend_from_slice(&row[..ca * plane]);
                    gb.extend_from_slice(&row[ca * plane..]);
                }
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            &Op::Mean(a) => {
                let count = self.nodes[a].value.numel();
                let g = gy[0] / T::lit(count as f64);
                self.accumulate(a, vec![g; count]);
            }
        }
    }

    fn backprop_binary(&mut self, a: usize, b: usize, kind: BinaryKind, gy: &[T]) {
        let av = self.nodes[a].value.data();
        let bv = self.nodes[b].value.data();
        let scalar_b = bv.len() == 1 && av.len() != 1;
        let bat = |i: usize| if scalar_b { bv[0] } else { bv[i] };
        let ga: Vec<T> = match kind {
            BinaryKind::Add | BinaryKind::Sub => gy.to_vec(),
            BinaryKind::Mul => gy.iter().enumerate().map(|(i, &g)| g * bat(i)).collect(),
            BinaryKind::Div => gy.iter().enumerate().map(|(i, &g)| g / bat(i)).collect(),
        };
        let gb_full: Vec<T> = match kind {
            BinaryKind::Add => gy.to_vec(),
            BinaryKind::Sub => gy.iter().map(|&g| -g).collect(),
            BinaryKind::Mul => gy.iter().zip(av).map(|(&g, &x)| g * x).collect(),
            BinaryKind::Div => gy
                .iter()
                .enumerate()
                .map(|(i, &g)| {
                    let y = bat(i);
                    -g * av[i] / (y * y)
                })
                .collect(),
        };
        let gb = if scalar_b { vec![gb_full.iter().copied().sum::<T>()] } else { gb_full };
        self.accumulate(a, ga);
        self.accumulate(b, gb);
    }
}
