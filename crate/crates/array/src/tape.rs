//! Reverse-mode differentiation over whole tensors.
//!
//! A [`Tape`] records every operation as a node in creation order, so the
//! node list is already a topological order and the backward sweep simply
//! walks it in reverse. Parameters live in a [`ParamStore`]; gradients come
//! back as a dense [`Gradients`] map with one entry per stored parameter,
//! zero for parameters the loss never touched.
//!
//! Complex parameters are stored as separate real and imaginary tensors.
//! Their gradients are therefore the pair `(∂L/∂re, ∂L/∂im)`, i.e. twice the
//! Wirtinger derivative with respect to the conjugate, accumulated in real64.

use crate::tensor::{axis_split, Tensor};
use crate::{ArrayError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.values
            .iter()
            .zip(&self.names)
            .enumerate()
            .map(|(i, (v, n))| (ParamId(i), n.as_str(), v))
    }
}

/// Dense gradient map indexed by [`ParamId`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store.values.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Adds `other` scaled by `weight` into `self`.
    pub fn accumulate(&mut self, other: &Gradients, weight: f64) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            for (x, y) in a.data_mut().iter_mut().zip(b.data()) {
                *x += weight * y;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation implemented outside this crate. The caller computes the
/// forward value; the op supplies the vector-Jacobian product.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Returns one gradient (same length as the input) per input, or `None`
    /// for inputs that receive no gradient.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>>;
}

enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        rows: usize,
        fan_in: usize,
        fan_out: usize,
    },
    Gelu(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>, usize),
    Select {
        x: Var,
        axis: usize,
        index: usize,
    },
    Flip(Var, usize),
    Reshape(Var),
    AxisConv {
        x: Var,
        kernel: Var,
        skip: Option<Var>,
        axis: usize,
        reverse: bool,
    },
    RelL2 {
        pred: Var,
        target: Tensor,
        groups: usize,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    cdf + x * pdf
}

/// Shared loop for causal (or anti-causal when `reverse`) per-channel
/// convolution along one axis. `kt` is the kernel transposed to
/// `[taps, channels]`.
#[allow(clippy::too_many_arguments)]
fn conv_lines(
    out: &mut [f64],
    inp: &[f64],
    kt: &[f64],
    taps: usize,
    channels: usize,
    outer: usize,
    n: usize,
    inner: usize,
    reverse: bool,
) {
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..n {
            let dst = &mut out[base + i * inner..base + (i + 1) * inner];
            let max_j = if reverse { n - i } else { i + 1 }.min(taps);
            for j in 0..max_j {
                let src_i = if reverse { i + j } else { i - j };
                let src = &inp[base + src_i * inner..base + (src_i + 1) * inner];
                let k = &kt[j * channels..(j + 1) * channels];
                for (d, s) in dst.chunks_exact_mut(channels).zip(src.chunks_exact(channels)) {
                    for h in 0..channels {
                        d[h] += k[h] * s[h];
                    }
                }
            }
        }
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).clone().with_requires_grad(true), Op::Param(id))
    }

    fn same_shape(&self, a: Var, b: Var) {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "elementwise operands must share a shape"
        );
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        self.same_shape(a, b);
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        Tensor::from_vec(x.shape(), data).unwrap()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_map(a, b, |p, q| p + q);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_map(a, b, |p, q| p - q);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_map(a, b, |p, q| p * q);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x * s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.push(v, Op::Sum(a))
    }

    /// `y = x Wᵀ + b` over the last axis. `w` is `[out, in]`, `b` is `[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xs = self.value(x).shape().to_vec();
        let ws = self.value(w).shape().to_vec();
        assert_eq!(ws.len(), 2, "weight must be [out, in]");
        let fan_in = *xs.last().expect("linear input needs a channel axis");
        assert_eq!(ws[1], fan_in, "weight fan-in mismatch");
        let fan_out = ws[0];
        let rows = self.value(x).len() / fan_in.max(1);
        let mut out = vec![0.0; rows * fan_out];
        if let Some(b) = b {
            let bias = self.value(b).data();
            assert_eq!(bias.len(), fan_out, "bias length");
            for row in out.chunks_exact_mut(fan_out) {
                row.copy_from_slice(bias);
            }
        }
        if rows > 0 && fan_in > 0 && fan_out > 0 {
            let xd = self.value(x).data();
            let wd = self.value(w).data();
            // SAFETY: slices are sized rows×fan_in, fan_out×fan_in and
            // rows×fan_out with the strides passed below.
            unsafe {
                matrixmultiply::dgemm(
                    rows,
                    fan_in,
                    fan_out,
                    1.0,
                    xd.as_ptr(),
                    fan_in as isize,
                    1,
                    wd.as_ptr(),
                    1,
                    fan_in as isize,
                    1.0,
                    out.as_mut_ptr(),
                    fan_out as isize,
                    1,
                );
            }
        }
        let mut shape = xs;
        *shape.last_mut().unwrap() = fan_out;
        let v = Tensor::from_vec(&shape, out).unwrap();
        self.push(
            v,
            Op::Linear {
                x,
                w,
                b,
                rows,
                fan_in,
                fan_out,
            },
        )
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu);
        self.push(v, Op::Gelu(x))
    }

    /// Concatenates along the last axis.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let lead = {
            let s = self.value(parts[0]).shape();
            s[..s.len() - 1].to_vec()
        };
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let s = self.value(p).shape();
                assert_eq!(&s[..s.len() - 1], &lead[..], "concat leading shape");
                *s.last().unwrap()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let v = Tensor::from_vec(&shape, out).unwrap();
        self.push(v, Op::Concat(parts.to_vec()))
    }

    /// Stacks equal-shaped tensors along a new axis at position `axis`.
    pub fn stack(&mut self, parts: &[Var], axis: usize) -> Var {
        assert!(!parts.is_empty());
        let base = self.value(parts[0]).shape().to_vec();
        assert!(axis <= base.len());
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis..].iter().product();
        let mut out = Vec::with_capacity(outer * inner * parts.len());
        for o in 0..outer {
            for &p in parts {
                assert_eq!(self.value(p).shape(), &base[..], "stack shape");
                out.extend_from_slice(&self.value(p).data()[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = base;
        shape.insert(axis, parts.len());
        let v = Tensor::from_vec(&shape, out).unwrap();
        self.push(v, Op::Stack(parts.to_vec(), axis))
    }

    /// Picks one index along `axis`, dropping that axis.
    pub fn select(&mut self, x: Var, axis: usize, index: usize) -> Var {
        let shape = self.value(x).shape().to_vec();
        let (outer, n, inner) = axis_split(&shape, axis);
        assert!(index < n, "select index out of range");
        let d = self.value(x).data();
        let mut out = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let s = (o * n + index) * inner;
            out.extend_from_slice(&d[s..s + inner]);
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        let v = Tensor::from_vec(&new_shape, out).unwrap();
        self.push(v, Op::Select { x, axis, index })
    }

    pub fn flip(&mut self, x: Var, axis: usize) -> Var {
        let v = flip_tensor(self.value(x), axis);
        self.push(v, Op::Flip(x, axis))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let v = self.value(x).reshape(shape).expect("reshape size");
        self.push(v, Op::Reshape(x))
    }

    /// Per-channel convolution along `axis` with a `[channels, taps]`
    /// kernel (channels = last axis of `x`). Causal by default:
    /// `y[i] = Σ_j k[j] x[i-j]`; with `reverse`, `y[i] = Σ_j k[j] x[i+j]`,
    /// which equals flipping, convolving causally and flipping back.
    /// Taps beyond the sequence are ignored (zero initial state).
    /// `skip` adds `D ⊙ x` with a per-channel `[channels]` vector.
    pub fn axis_conv(
        &mut self,
        x: Var,
        kernel: Var,
        skip: Option<Var>,
        axis: usize,
        reverse: bool,
    ) -> Var {
        let shape = self.value(x).shape().to_vec();
        assert!(axis + 1 < shape.len(), "conv axis must not be the channel axis");
        let channels = *shape.last().unwrap();
        let ks = self.value(kernel).shape().to_vec();
        assert_eq!(ks.len(), 2, "kernel must be [channels, taps]");
        assert_eq!(ks[0], channels, "kernel channel count");
        let taps = ks[1];
        let (outer, n, inner) = axis_split(&shape, axis);
        let kt = transpose(self.value(kernel).data(), channels, taps);
        let xd = self.value(x).data();
        let mut out = vec![0.0; xd.len()];
        conv_lines(&mut out, xd, &kt, taps, channels, outer, n, inner, reverse);
        if let Some(s) = skip {
            let d = self.value(s).data();
            assert_eq!(d.len(), channels, "skip length");
            for (row_o, row_x) in out.chunks_exact_mut(channels).zip(xd.chunks_exact(channels)) {
                for h in 0..channels {
                    row_o[h] += d[h] * row_x[h];
                }
            }
        }
        let v = Tensor::from_vec(&shape, out).unwrap();
        self.push(
            v,
            Op::AxisConv {
                x,
                kernel,
                skip,
                axis,
                reverse,
            },
        )
    }

    /// Mean over `groups` contiguous chunks of `‖pred − target‖ / ‖target‖`.
    pub fn rel_l2(&mut self, pred: Var, target: &Tensor, groups: usize) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(ArrayError::LengthMismatch(p.len(), target.len()));
        }
        if groups == 0 || p.len() % groups != 0 {
            return Err(ArrayError::LengthMismatch(p.len(), groups));
        }
        let size = p.len() / groups;
        let mut total = 0.0;
        for (pg, tg) in p.data().chunks_exact(size).zip(target.data().chunks_exact(size)) {
            let tn = tg.iter().map(|v| v * v).sum::<f64>().sqrt();
            if tn == 0.0 {
                return Err(ArrayError::Empty);
            }
            let dn = pg.iter().zip(tg).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            total += dn / tn;
        }
        let v = Tensor::scalar(total / groups as f64);
        Ok(self.push(
            v,
            Op::RelL2 {
                pred,
                target: target.clone(),
                groups,
            },
        ))
    }

    pub fn custom(&mut self, inputs: &[Var], value: Tensor, op: Box<dyn CustomOp>) -> Var {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
        )
    }

    /// Backpropagates from a scalar `loss`.
    pub fn backward(&self, loss: Var, store: &ParamStore) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(ArrayError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Gradients::zeros_like(store);
        let mut connected = false;

        fn acc(grads: &mut [Option<Vec<f64>>], v: Var, g: &[f64]) {
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g.to_vec()),
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    connected = true;
                    out.grads[id.0]
                        .data_mut()
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, &g);
                    acc(&mut grads, *b, &g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    acc(&mut grads, *b, &neg);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    let ga: Vec<f64> = g.iter().zip(vb).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(va).map(|(x, y)| x * y).collect();
                    acc(&mut grads, *a, &ga);
                    acc(&mut grads, *b, &gb);
                }
                Op::Scale(a, s) => {
                    let ga: Vec<f64> = g.iter().map(|v| v * s).collect();
                    acc(&mut grads, *a, &ga);
                }
                Op::Sum(a) => {
                    let ga = vec![g[0]; self.value(*a).len()];
                    acc(&mut grads, *a, &ga);
                }
                Op::Linear {
                    x,
                    w,
                    b,
                    rows,
                    fan_in,
                    fan_out,
                } => {
                    let (rows, fan_in, fan_out) = (*rows, *fan_in, *fan_out);
                    let xd = self.value(*x).data();
                    let wd = self.value(*w).data();
                    let mut gx = vec![0.0; rows * fan_in];
                    let mut gw = vec![0.0; fan_out * fan_in];
                    if rows > 0 && fan_in > 0 && fan_out > 0 {
                        // SAFETY: see `linear`; gx = g·W, gW = gᵀ·x.
                        unsafe {
                            matrixmultiply::dgemm(
                                rows,
                                fan_out,
                                fan_in,
                                1.0,
                                g.as_ptr(),
                                fan_out as isize,
                                1,
                                wd.as_ptr(),
                                fan_in as isize,
                                1,
                                0.0,
                                gx.as_mut_ptr(),
                                fan_in as isize,
                                1,
                            );
                            matrixmultiply::dgemm(
                                fan_out,
                                rows,
                                fan_in,
                                1.0,
                                g.as_ptr(),
                                1,
                                fan_out as isize,
                                xd.as_ptr(),
                                fan_in as isize,
                                1,
                                0.0,
                                gw.as_mut_ptr(),
                                fan_in as isize,
                                1,
                            );
                        }
                    }
                    acc(&mut grads, *x, &gx);
                    acc(&mut grads, *w, &gw);
                    if let Some(b) = b {
                        let mut gb = vec![0.0; fan_out];
                        for row in g.chunks_exact(fan_out) {
                            gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                        acc(&mut grads, *b, &gb);
                    }
                }
                Op::Gelu(x) => {
                    let xd = self.value(*x).data();
                    let gx: Vec<f64> = g.iter().zip(xd).map(|(gv, &xv)| gv * gelu_grad(xv)).collect();
                    acc(&mut grads, *x, &gx);
                }
                Op::Concat(parts) => {
                    let widths: Vec<usize> =
                        parts.iter().map(|&p| *self.value(p).shape().last().unwrap()).collect();
                    let total: usize = widths.iter().sum();
                    let rows = g.len() / total;
                    let mut offset = 0;
                    for (&p, &w) in parts.iter().zip(&widths) {
                        let mut gp = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        acc(&mut grads, p, &gp);
                        offset += w;
                    }
                }
                Op::Stack(parts, axis) => {
                    let base = self.value(parts[0]).shape();
                    let outer: usize = base[..*axis].iter().product();
                    let inner: usize = base[*axis..].iter().product();
                    let k = parts.len();
                    for (pi, &p) in parts.iter().enumerate() {
                        let mut gp = Vec::with_capacity(outer * inner);
                        for o in 0..outer {
                            let s = (o * k + pi) * inner;
                            gp.extend_from_slice(&g[s..s + inner]);
                        }
                        acc(&mut grads, p, &gp);
                    }
                }
                Op::Select { x, axis, index } => {
                    let shape = self.value(*x).shape();
                    let (outer, n, inner) = axis_split(shape, *axis);
                    let mut gx = vec![0.0; outer * n * inner];
                    for o in 0..outer {
                        let s = (o * n + index) * inner;
                        gx[s..s + inner].copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                    acc(&mut grads, *x, &gx);
                }
                Op::Flip(x, axis) => {
                    let gt = Tensor::from_vec(node.value.shape(), g).unwrap();
                    acc(&mut grads, *x, flip_tensor(&gt, *axis).data());
                }
                Op::Reshape(x) => acc(&mut grads, *x, &g),
                Op::AxisConv {
                    x,
                    kernel,
                    skip,
                    axis,
                    reverse,
                } => {
                    let shape = self.value(*x).shape();
                    let channels = *shape.last().unwrap();
                    let taps = self.value(*kernel).shape()[1];
                    let (outer, n, inner) = axis_split(shape, *axis);
                    let xd = self.value(*x).data();
                    let kt = transpose(self.value(*kernel).data(), channels, taps);
                    let mut gx = vec![0.0; xd.len()];
                    conv_lines(&mut gx, &g, &kt, taps, channels, outer, n, inner, !reverse);
                    let mut gkt = vec![0.0; taps * channels];
                    for o in 0..outer {
                        let base = o * n * inner;
                        for i in 0..n {
                            let gi = &g[base + i * inner..base + (i + 1) * inner];
                            let max_j = if *reverse { n - i } else { i + 1 }.min(taps);
                            for j in 0..max_j {
                                let src_i = if *reverse { i + j } else { i - j };
                                let src = &xd[base + src_i * inner..base + (src_i + 1) * inner];
                                let kg = &mut gkt[j * channels..(j + 1) * channels];
                                for (gr, sr) in
                                    gi.chunks_exact(channels).zip(src.chunks_exact(channels))
                                {
                                    for h in 0..channels {
                                        kg[h] += gr[h] * sr[h];
                                    }
                                }
                            }
                        }
                    }
                    if let Some(s) = skip {
                        let d = self.value(*s).data();
                        let mut gd = vec![0.0; channels];
                        for ((gxr, gr), xr) in gx
                            .chunks_exact_mut(channels)
                            .zip(g.chunks_exact(channels))
                            .zip(xd.chunks_exact(channels))
                        {
                            for h in 0..channels {
                                gxr[h] += d[h] * gr[h];
                                gd[h] += gr[h] * xr[h];
                            }
                        }
                        acc(&mut grads, *s, &gd);
                    }
                    acc(&mut grads, *x, &gx);
                    acc(&mut grads, *kernel, &transpose(&gkt, taps, channels));
                }
                Op::RelL2 {
                    pred,
                    target,
                    groups,
                } => {
                    let p = self.value(*pred).data();
                    let size = p.len() / groups;
                    let mut gp = vec![0.0; p.len()];
                    for ((gc, pg), tg) in gp
                        .chunks_exact_mut(size)
                        .zip(p.chunks_exact(size))
                        .zip(target.data().chunks_exact(size))
                    {
                        let tn = tg.iter().map(|v| v * v).sum::<f64>().sqrt();
                        let dn = pg.iter().zip(tg).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                        if dn > 0.0 {
                            let c = g[0] / (dn * tn * *groups as f64);
                            for ((o, a), b) in gc.iter_mut().zip(pg).zip(tg) {
                                *o = c * (a - b);
                            }
                        }
                    }
                    acc(&mut grads, *pred, &gp);
                }
                Op::Custom { inputs, op } => {
                    let vals: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                    let gs = op.backward(&vals, &node.value, &g);
                    assert_eq!(gs.len(), inputs.len(), "{} returned wrong arity", op.name());
                    for (&v, gi) in inputs.iter().zip(gs) {
                        if let Some(gi) = gi {
                            acc(&mut grads, v, &gi);
                        }
                    }
                }
            }
        }
        if !connected {
            return Err(ArrayError::Disconnected);
        }
        Ok(out)
    }
}

fn transpose(d: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; d.len()];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = d[r * cols + c];
        }
    }
    t
}

pub fn flip_tensor(t: &Tensor, axis: usize) -> Tensor {
    let shape = t.shape();
    let (outer, n, inner) = axis_split(shape, axis);
    let d = t.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..n {
            let s = (o * n + i) * inner;
            let dst = (o * n + (n - 1 - i)) * inner;
            out[dst..dst + inner].copy_from_slice(&d[s..s + inner]);
        }
    }
    Tensor::from_vec(shape, out).unwrap()
}
