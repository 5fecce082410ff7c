use crate::kernels::{self, ConvGeom, GroupStats};
use crate::tensor::numel;
use crate::{Real, Result, Shape, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum UnaryKind {
    Relu,
    Sigmoid,
    Log,
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        stats: GroupStats<T>,
    },
    Unary {
        x: Var,
        kind: UnaryKind,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Clamp {
        x: Var,
        lo: T,
        hi: T,
    },
    Binary {
        a: Var,
        b: Var,
        kind: BinaryKind,
    },
    SumAxis {
        x: Var,
        axis: usize,
    },
    SumAll {
        x: Var,
    },
    MaxChannels {
        x: Var,
        argmax: Vec<u32>,
    },
    ConcatChannels {
        parts: Vec<Var>,
    },
    Upsample {
        x: Var,
        factor: usize,
    },
    LogSoftmaxChannels {
        x: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of recorded operations.
///
/// Nodes are appended in evaluation order, so the tape is already a
/// topological order of the computation.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar root with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err(op: &'static str, lhs: Shape, rhs: Shape) -> TensorError {
    TensorError::ShapeMismatch { op, lhs, rhs }
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives a gradient (a trainable parameter or a probe).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// 2-D convolution with zero padding. `w` is `Cout×Cin×k×k`, `b` is
    /// `1×Cout×1×1`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [n, cin, h, wd] = self.shape(x);
        let [cout, wcin, kh, kw] = self.shape(w);
        if wcin != cin || kh != kw {
            return Err(shape_err("conv2d", self.shape(x), self.shape(w)));
        }
        if let Some(b) = b {
            if self.shape(b) != [1, cout, 1, 1] {
                return Err(shape_err("conv2d bias", [1, cout, 1, 1], self.shape(b)));
            }
        }
        let geom = ConvGeom::new(cin, h, wd, kh, stride, pad).ok_or_else(|| TensorError::InvalidArgument {
            op: "conv2d",
            reason: format!("kernel {kh} stride {stride} pad {pad} does not fit {h}×{wd}"),
        })?;
        let out = kernels::conv2d_forward(
            self.value(x).data(),
            n,
            &geom,
            self.value(w).data(),
            cout,
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::from_vec([n, cout, geom.ho, geom.wo], out)?;
        let mut deps = vec![x, w];
        deps.extend(b);
        let rg = self.rg(&deps);
        Ok(self.push(value, Op::Conv2d { x, w, b, geom }, rg))
    }

    /// Group normalization with per-channel affine `gamma`, `beta`
    /// (`1×C×1×1` each).
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize, eps: f64) -> Result<Var> {
        let shape = self.shape(x);
        let c = shape[1];
        if groups == 0 || c % groups != 0 {
            return Err(TensorError::InvalidArgument {
                op: "group_norm",
                reason: format!("{groups} groups do not divide {c} channels"),
            });
        }
        for p in [gamma, beta] {
            if self.shape(p) != [1, c, 1, 1] {
                return Err(shape_err("group_norm affine", [1, c, 1, 1], self.shape(p)));
            }
        }
        let (out, stats) = kernels::group_norm_forward(
            self.value(x).data(),
            shape,
            groups,
            self.value(gamma).data(),
            self.value(beta).data(),
            T::of(eps),
        );
        let rg = self.rg(&[x, gamma, beta]);
        Ok(self.push(
            Tensor::from_vec(shape, out)?,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            },
            rg,
        ))
    }

    fn unary(&mut self, x: Var, kind: UnaryKind) -> Var {
        let f: fn(T) -> T = match kind {
            UnaryKind::Relu => |v| if v > T::zero() || v.is_nan() { v } else { T::zero() },
            UnaryKind::Sigmoid => |v| T::one() / (T::one() + (-v).exp()),
            UnaryKind::Log => |v| v.ln(),
            UnaryKind::Exp => |v| v.exp(),
        };
        let value = self.value(x).map(f);
        let rg = self.rg(&[x]);
        self.push(value, Op::Unary { x, kind }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Sigmoid)
    }

    pub fn ln(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Log)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, UnaryKind::Exp)
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let (s, t) = (T::of(scale), T::of(shift));
        let value = self.value(x).map(|v| v * s + t);
        let rg = self.rg(&[x]);
        self.push(value, Op::Affine { x, scale: s }, rg)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Var {
        self.affine(x, scale, 0.0)
    }

    /// Elementwise clamp into `[lo, hi]`; the gradient is zero outside.
    /// NaN passes through unchanged so that divergence stays visible.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        let value = self.value(x).map(|v| if v.is_nan() { v } else { v.max(lo).min(hi) });
        let rg = self.rg(&[x]);
        self.push(value, Op::Clamp { x, lo, hi }, rg)
    }

    fn binary(&mut self, a: Var, b: Var, kind: BinaryKind) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let out = kernels::broadcast_shape(&sa, &sb).ok_or_else(|| shape_err("broadcast", sa, sb))?;
        let f: fn(T, T) -> T = match kind {
            BinaryKind::Add => |x, y| x + y,
            BinaryKind::Sub => |x, y| x - y,
            BinaryKind::Mul => |x, y| x * y,
            BinaryKind::Div => |x, y| x / y,
            BinaryKind::Max => |x, y| if x >= y { x } else { y },
        };
        let data = kernels::broadcast_zip(self.value(a).data(), &sa, self.value(b).data(), &sb, &out, f);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::from_vec(out, data)?, Op::Binary { a, b, kind }, rg))
    }

    /// Broadcasting elementwise ops: every axis of each operand must match
    /// the output or be 1.
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

    /// Elementwise maximum; ties send the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, BinaryKind::Max)
    }

    /// Sum over one axis, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        if axis >= 4 {
            return Err(TensorError::InvalidArgument {
                op: "sum_axis",
                reason: format!("axis {axis} out of range"),
            });
        }
        let shape = self.shape(x);
        let (outer, len, inner) = kernels::axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let row = &src[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc += *v;
                }
            }
        }
        let mut oshape = shape;
        oshape[axis] = 1;
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_vec(oshape, out)?, Op::SumAxis { x, axis }, rg))
    }

    /// Mean over the given axes, keeping them with extent 1.
    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(x);
        let mut cur = x;
        let mut count = 1usize;
        for &a in axes {
            count *= shape[a];
            cur = self.sum_axis(cur, a)?;
        }
        Ok(self.scale(cur, 1.0 / count as f64))
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        let rg = self.rg(&[x]);
        self.push(value, Op::SumAll { x }, rg)
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        let s = self.sum_all(x);
        self.scale(s, 1.0 / n as f64)
    }

    /// Maximum over the channel axis; `N×C×H×W → N×1×H×W`.
    pub fn max_channels(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        let src = self.value(x).data();
        let hw = h * w;
        let mut out = vec![T::neg_infinity(); n * hw];
        let mut argmax = vec![0u32; n * hw];
        for b in 0..n {
            for ch in 0..c {
                let plane = &src[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                for (i, &v) in plane.iter().enumerate() {
                    if v > out[b * hw + i] {
                        out[b * hw + i] = v;
                        argmax[b * hw + i] = ch as u32;
                    }
                }
            }
        }
        let rg = self.rg(&[x]);
        let value = Tensor::from_vec([n, 1, h, w], out).expect("shape computed from input");
        self.push(value, Op::MaxChannels { x, argmax }, rg)
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or(TensorError::InvalidArgument {
            op: "concat_channels",
            reason: "no inputs".into(),
        })?;
        let [n, _, h, w] = self.shape(first);
        let mut ctot = 0;
        for &p in parts {
            let s = self.shape(p);
            if s[0] != n || s[2] != h || s[3] != w {
                return Err(shape_err("concat_channels", self.shape(first), s));
            }
            ctot += s[1];
        }
        let hw = h * w;
        let mut out = Vec::with_capacity(n * ctot * hw);
        for b in 0..n {
            for &p in parts {
                let c = self.shape(p)[1];
                out.extend_from_slice(&self.value(p).data()[b * c * hw..(b + 1) * c * hw]);
            }
        }
        let rg = self.rg(parts);
        Ok(self.push(
            Tensor::from_vec([n, ctot, h, w], out)?,
            Op::ConcatChannels { parts: parts.to_vec() },
            rg,
        ))
    }

    /// Nearest-neighbour spatial upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        if factor == 0 {
            return Err(TensorError::InvalidArgument {
                op: "upsample_nearest",
                reason: "factor must be positive".into(),
            });
        }
        let [n, c, h, w] = self.shape(x);
        let (ho, wo) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        for plane in src.chunks(h * w) {
            for oy in 0..ho {
                let row = &plane[(oy / factor) * w..(oy / factor + 1) * w];
                for ox in 0..wo {
                    out.push(row[ox / factor]);
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(Tensor::from_vec([n, c, ho, wo], out)?, Op::Upsample { x, factor }, rg))
    }

    /// Log-softmax over the channel axis.
    pub fn log_softmax_channels(&mut self, x: Var) -> Var {
        let [n, c, h, w] = self.shape(x);
        let hw = h * w;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for b in 0..n {
            let base = b * c * hw;
            for i in 0..hw {
                let mut m = T::neg_infinity();
                for ch in 0..c {
                    m = m.max(src[base + ch * hw + i]);
                }
                let mut s = T::zero();
                for ch in 0..c {
                    s += (src[base + ch * hw + i] - m).exp();
                }
                let lse = m + s.ln();
                for ch in 0..c {
                    out[base + ch * hw + i] = src[base + ch * hw + i] - lse;
                }
            }
        }
        let rg = self.rg(&[x]);
        let value = Tensor::from_vec([n, c, h, w], out).expect("shape computed from input");
        self.push(value, Op::LogSoftmaxChannels { x }, rg)
    }

    /// Reverse pass from a one-element root.
    ///
    /// Gradients of intermediate nodes are released as soon as they have been
    /// propagated; only leaf gradients survive in the result.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rshape = self.shape(root);
        if numel(&rshape) != 1 {
            return Err(TensorError::NonScalarRoot(rshape));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(rshape, T::one()));
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            self.propagate(node, &dy, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, dy: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, geom } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let r = kernels::conv2d_backward(
                    self.value(*x).data(),
                    xs[0],
                    geom,
                    self.value(*w).data(),
                    ws[0],
                    dy.data(),
                    self.requires_grad(*x),
                    self.requires_grad(*w),
                    b.is_some_and(|b| self.requires_grad(b)),
                );
                if let Some(dx) = r.dx {
                    accumulate(grads, *x, Tensor::from_vec(xs, dx)?);
                }
                if let Some(dw) = r.dw {
                    accumulate(grads, *w, Tensor::from_vec(ws, dw)?);
                }
                if let (Some(b), Some(db)) = (b, r.db) {
                    accumulate(grads, *b, Tensor::from_vec([1, ws[0], 1, 1], db)?);
                }
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                stats,
            } => {
                let xs = self.shape(*x);
                let (dx, dg, db) = kernels::group_norm_backward(
                    self.value(*x).data(),
                    xs,
                    *groups,
                    self.value(*gamma).data(),
                    stats,
                    dy.data(),
                );
                let cs = [1, xs[1], 1, 1];
                if self.requires_grad(*x) {
                    accumulate(grads, *x, Tensor::from_vec(xs, dx)?);
                }
                if self.requires_grad(*gamma) {
                    accumulate(grads, *gamma, Tensor::from_vec(cs, dg)?);
                }
                if self.requires_grad(*beta) {
                    accumulate(grads, *beta, Tensor::from_vec(cs, db)?);
                }
            }
            Op::Unary { x, kind } => {
                let xv = self.value(*x).data();
                let d: Vec<T> = match kind {
                    UnaryKind::Relu => dy
                        .data()
                        .iter()
                        .zip(xv)
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect(),
                    UnaryKind::Sigmoid => dy
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &s)| g * s * (T::one() - s))
                        .collect(),
                    UnaryKind::Log => dy.data().iter().zip(xv).map(|(&g, &v)| g / v).collect(),
                    UnaryKind::Exp => dy.data().iter().zip(y.data()).map(|(&g, &e)| g * e).collect(),
                };
                accumulate(grads, *x, Tensor::from_vec(y.shape(), d)?);
            }
            Op::Affine { x, scale } => {
                let s = *scale;
                accumulate(grads, *x, dy.map(|g| g * s));
            }
            Op::Clamp { x, lo, hi } => {
                let d = dy
                    .data()
                    .iter()
                    .zip(self.value(*x).data())
                    .map(|(&g, &v)| if v >= *lo && v <= *hi { g } else { T::zero() })
                    .collect();
                accumulate(grads, *x, Tensor::from_vec(y.shape(), d)?);
            }
            Op::Binary { a, b, kind } => self.binary_backward(*a, *b, *kind, dy, grads)?,
            Op::SumAxis { x, axis } => {
                let xs = self.shape(*x);
                let (outer, len, inner) = kernels::axis_split(&xs, *axis);
                let mut d = Vec::with_capacity(numel(&xs));
                for o in 0..outer {
                    let row = &dy.data()[o * inner..(o + 1) * inner];
                    for _ in 0..len {
                        d.extend_from_slice(row);
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(xs, d)?);
            }
            Op::SumAll { x } => {
                accumulate(grads, *x, Tensor::full(self.shape(*x), dy.item()));
            }
            Op::MaxChannels { x, argmax } => {
                let xs = self.shape(*x);
                let hw = xs[2] * xs[3];
                let mut d = vec![T::zero(); numel(&xs)];
                for (j, (&g, &c)) in dy.data().iter().zip(argmax).enumerate() {
                    let (b, i) = (j / hw, j % hw);
                    d[(b * xs[1] + c as usize) * hw + i] += g;
                }
                accumulate(grads, *x, Tensor::from_vec(xs, d)?);
            }
            Op::ConcatChannels { parts } => {
                let [n, ctot, h, w] = y.shape();
                let hw = h * w;
                let mut off = 0;
                for &p in parts {
                    let c = self.shape(p)[1];
                    if self.requires_grad(p) {
                        let mut d = Vec::with_capacity(n * c * hw);
                        for b in 0..n {
                            let s = (b * ctot + off) * hw;
                            d.extend_from_slice(&dy.data()[s..s + c * hw]);
                        }
                        accumulate(grads, p, Tensor::from_vec([n, c, h, w], d)?);
                    }
                    off += c;
                }
            }
            Op::Upsample { x, factor } => {
                let xs = self.shape(*x);
                let (h, w) = (xs[2], xs[3]);
                let wo = w * factor;
                let mut d = vec![T::zero(); numel(&xs)];
                for (p, plane) in dy.data().chunks(h * w * factor * factor).enumerate() {
                    let dst = &mut d[p * h * w..(p + 1) * h * w];
                    for (k, &g) in plane.iter().enumerate() {
                        let (oy, ox) = (k / wo, k % wo);
                        dst[(oy / factor) * w + ox / factor] += g;
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(xs, d)?);
            }
            Op::LogSoftmaxChannels { x } => {
                let [n, c, h, w] = y.shape();
                let hw = h * w;
                let (yv, g) = (y.data(), dy.data());
                let mut d = vec![T::zero(); yv.len()];
                for b in 0..n {
                    let base = b * c * hw;
                    for i in 0..hw {
                        let mut s = T::zero();
                        for ch in 0..c {
                            s += g[base + ch * hw + i];
                        }
                        for ch in 0..c {
                            let k = base + ch * hw + i;
                            d[k] = g[k] - yv[k].exp() * s;
                        }
                    }
                }
                accumulate(grads, *x, Tensor::from_vec(y.shape(), d)?);
            }
        }
        Ok(())
    }

    fn binary_backward(
        &self,
        a: Var,
        b: Var,
        kind: BinaryKind,
        dy: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        let out = dy.shape();
        let (av, bv) = (self.value(a), self.value(b));
        let (sa, sb) = (av.shape(), bv.shape());
        let g = dy.data();
        let zip = |t: &Tensor<T>, f: fn(T, T) -> T| kernels::broadcast_zip(g, &out, t.data(), &t.shape(), &out, f);
        let ge = || kernels::broadcast_zip(av.data(), &sa, bv.data(), &sb, &out, |x, y| if x >= y { T::one() } else { T::zero() });
        if self.requires_grad(a) {
            let full: Vec<T> = match kind {
                BinaryKind::Add | BinaryKind::Sub => g.to_vec(),
                BinaryKind::Mul => zip(bv, |d, y| d * y),
                BinaryKind::Div => zip(bv, |d, y| d / y),
                BinaryKind::Max => g.iter().zip(ge()).map(|(&d, m)| d * m).collect(),
            };
            let red = kernels::sum_to_shape(&full, &out, &sa);
            accumulate(grads, a, Tensor::from_vec(sa, red)?);
        }
        if self.requires_grad(b) {
            let full: Vec<T> = match kind {
                BinaryKind::Add => g.to_vec(),
                BinaryKind::Sub => g.iter().map(|&d| -d).collect(),
                BinaryKind::Mul => zip(av, |d, x| d * x),
                BinaryKind::Div => {
                    let q = kernels::broadcast_zip(av.data(), &sa, bv.data(), &sb, &out, |x, y| x / (y * y));
                    g.iter().zip(q).map(|(&d, q)| -d * q).collect()
                }
                BinaryKind::Max => g.iter().zip(ge()).map(|(&d, m)| d * (T::one() - m)).collect(),
            };
            let red = kernels::sum_to_shape(&full, &out, &sb);
            accumulate(grads, b, Tensor::from_vec(sb, red)?);
        }
        Ok(())
    }
}
