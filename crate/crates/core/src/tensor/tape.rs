use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvDims};
use super::{check_finite, Scalar, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op<S: Scalar> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Conv2d {
        x: Var,
        w: Var,
        dims: ConvDims,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, S),
    Relu(Var),
    LeakyRelu(Var, S),
    Tanh(Var),
    Upsample2x(Var),
    AvgPool2x(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Permute(Var, Vec<usize>),
    AddBias(Var, Var),
    ScaleChannels(Var, Var),
    NoiseInject {
        x: Var,
        noise: Vec<S>,
        strength: Var,
    },
    SpatialMean(Var),
    RepeatBatch(Var, usize),
    Demodulate {
        w: Var,
        s: Var,
    },
}

#[derive(Debug)]
struct Node<S: Scalar> {
    value: Tensor<S>,
    op: Op<S>,
    needs_grad: bool,
    grad: Option<Vec<S>>,
}

/// Append-only record of primitive applications.
///
/// Entries are stored in creation order, which is a topological order: every
/// input of entry `i` is a leaf or an entry `< i`.
#[derive(Debug)]
pub struct Tape<S: Scalar = f32> {
    id: u64,
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, contrib: Vec<S>) {
    match slot {
        Some(g) => {
            for (a, b) in g.iter_mut().zip(contrib) {
                *a += b;
            }
        }
        None => *slot = Some(contrib),
    }
}

impl<S: Scalar> Tape<S> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<(), TensorError> {
        if v.tape == self.id && v.idx < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::NotOnTape)
        }
    }

    fn node(&self, v: Var) -> Result<&Node<S>, TensorError> {
        self.check(v)?;
        Ok(&self.nodes[v.idx])
    }

    fn push(
        &mut self,
        op: &'static str,
        value: Tensor<S>,
        rec: Op<S>,
        inputs: &[Var],
    ) -> Result<Var, TensorError> {
        check_finite(op, value.data())?;
        let needs_grad = inputs.iter().any(|v| self.nodes[v.idx].needs_grad);
        self.nodes.push(Node {
            value,
            op: rec,
            needs_grad,
            grad: None,
        });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    /// Records a leaf. Gradients are tracked iff `tensor.requires_grad()`.
    pub fn leaf(&mut self, tensor: Tensor<S>) -> Result<Var, TensorError> {
        check_finite("leaf", tensor.data())?;
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
            grad: None,
        });
        Ok(Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        })
    }

    /// Records a constant leaf (never receives a gradient).
    pub fn constant(&mut self, tensor: Tensor<S>) -> Result<Var, TensorError> {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.node(v).expect("var belongs to tape").value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.node(v).map(|n| n.needs_grad).unwrap_or(false)
    }

    /// Gradient accumulated by the last [`Tape::backward`], if any.
    pub fn grad(&self, v: Var) -> Option<&[S]> {
        self.node(v).ok()?.grad.as_deref()
    }

    pub fn grad_tensor(&self, v: Var) -> Option<Tensor<S>> {
        let node = self.node(v).ok()?;
        let g = node.grad.clone()?;
        Tensor::new(node.value.shape().to_vec(), g).ok()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ta, tb) = (self.node(a)?, self.node(b)?);
        let (sa, sb) = (ta.value.shape(), tb.value.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(mismatch("matmul", sa, sb));
        }
        let (m, n, p) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(ta.value.data(), tb.value.data(), m, n, p);
        let value = Tensor::new(vec![m, p], out)?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = &self.node(a)?.value;
        let s = t.shape();
        if s.len() != 2 {
            return Err(TensorError::InvalidShape {
                op: "transpose",
                shape: s.to_vec(),
                reason: "expected a matrix",
            });
        }
        let (r, c) = (s[0], s[1]);
        let d = t.data();
        let out = (0..r * c).map(|i| d[(i % r) * c + i / r]).collect();
        let value = Tensor::new(vec![c, r], out)?;
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    /// Same-padded, stride-1 cross-correlation.
    ///
    /// `x` is either a single image `[c_in×h×w]` or a batch `[n×c_in×h×w]`;
    /// `w` is `[c_out×c_in×k×k]` with odd `k`.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var, TensorError> {
        let (tx, tw) = (self.node(x)?, self.node(w)?);
        let (sx, sw) = (tx.value.shape(), tw.value.shape());
        if sw.len() != 4 || sw[2] != sw[3] {
            return Err(mismatch("conv2d", sx, sw));
        }
        let k = sw[2];
        if k % 2 == 0 {
            return Err(TensorError::EvenKernel(k));
        }
        let (batch, c_in, h, wd, batched) = match *sx {
            [c, h, w] => (1, c, h, w, false),
            [n, c, h, w] => (n, c, h, w, true),
            _ => return Err(mismatch("conv2d", sx, sw)),
        };
        if c_in != sw[1] {
            return Err(mismatch("conv2d", sx, sw));
        }
        let dims = ConvDims {
            batch,
            c_in,
            c_out: sw[0],
            h,
            w: wd,
            k,
        };
        let out = kernels::conv2d_forward(tx.value.data(), tw.value.data(), dims);
        let shape = if batched {
            vec![batch, dims.c_out, h, wd]
        } else {
            vec![dims.c_out, h, wd]
        };
        let value = Tensor::new(shape, out)?;
        self.push("conv2d", value, Op::Conv2d { x, w, dims }, &[x, w])
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(S, S) -> S,
        rec: Op<S>,
    ) -> Result<Var, TensorError> {
        let (ta, tb) = (&self.node(a)?.value, &self.node(b)?.value);
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta.shape(), tb.shape()));
        }
        let out = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), out)?;
        self.push(op, value, rec, &[a, b])
    }

    fn unary(
        &mut self,
        op: &'static str,
        a: Var,
        f: impl Fn(S) -> S,
        rec: Op<S>,
    ) -> Result<Var, TensorError> {
        let t = &self.node(a)?.value;
        let out = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), out)?;
        self.push(op, value, rec, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: S) -> Result<Var, TensorError> {
        self.unary("scale", a, |x| x * s, Op::Scale(a, s))
    }

    /// `max(x, 0)`; the derivative at exactly zero is taken to be 1.
    pub fn relu(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary(
            "relu",
            a,
            |x| if x >= S::zero() { x } else { S::zero() },
            Op::Relu(a),
        )
    }

    pub fn leaky_relu(&mut self, a: Var, slope: S) -> Result<Var, TensorError> {
        self.unary(
            "leaky_relu",
            a,
            |x| kernels::leaky_relu(x, slope),
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, TensorError> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    fn planes(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize), TensorError> {
        if shape.len() < 2 {
            return Err(TensorError::InvalidShape {
                op,
                shape: shape.to_vec(),
                reason: "needs two spatial axes",
            });
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        Ok((shape.iter().product::<usize>() / (h * w), h, w))
    }

    pub fn upsample2x_nearest(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = &self.node(a)?.value;
        let (planes, h, w) = Self::planes("upsample2x", t.shape())?;
        let out = kernels::upsample2x(t.data(), planes, h, w);
        let mut shape = t.shape().to_vec();
        let nd = shape.len();
        shape[nd - 2] *= 2;
        shape[nd - 1] *= 2;
        let value = Tensor::new(shape, out)?;
        self.push("upsample2x", value, Op::Upsample2x(a), &[a])
    }

    pub fn avgpool2x(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = &self.node(a)?.value;
        let (planes, h, w) = Self::planes("avgpool2x", t.shape())?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::InvalidShape {
                op: "avgpool2x",
                shape: t.shape().to_vec(),
                reason: "spatial extents must be even",
            });
        }
        let out = kernels::avgpool2x(t.data(), planes, h, w);
        let mut shape = t.shape().to_vec();
        let nd = shape.len();
        shape[nd - 2] /= 2;
        shape[nd - 1] /= 2;
        let value = Tensor::new(shape, out)?;
        self.push("avgpool2x", value, Op::AvgPool2x(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = &self.node(a)?.value;
        let s: S = t.data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, TensorError> {
        let t = &self.node(a)?.value;
        let s: S = t.data().iter().copied().sum();
        let m = s / S::from_usize(t.numel()).expect("count fits");
        self.push("mean", Tensor::scalar(m), Op::Mean(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var, TensorError> {
        let t = &self.node(a)?.value;
        let value = t.reshape(shape)?;
        self.push("reshape", value, Op::Reshape(a), &[a])
    }

    /// General axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var, TensorError> {
        let t = &self.node(a)?.value;
        let shape = t.shape();
        let mut seen = vec![false; shape.len()];
        if axes.len() != shape.len()
            || axes
                .iter()
                .any(|&ax| ax >= shape.len() || std::mem::replace(&mut seen[ax], true))
        {
            return Err(mismatch("permute", shape, axes));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
        let out = permute_data(t.data(), shape, axes);
        let value = Tensor::new(out_shape, out)?;
        self.push("permute", value, Op::Permute(a, axes.to_vec()), &[a])
    }

    /// Adds `b[c]` along axis 1 of `x[n×c×…]`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (tx, tb) = (&self.node(x)?.value, &self.node(b)?.value);
        let sx = tx.shape();
        if sx.len() < 2 || tb.numel() != sx[1] {
            return Err(mismatch("add_bias", sx, tb.shape()));
        }
        let c = sx[1];
        let inner: usize = sx[2..].iter().product();
        let bd = tb.data();
        let out = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + bd[(i / inner) % c])
            .collect();
        let value = Tensor::new(sx.to_vec(), out)?;
        self.push("add_bias", value, Op::AddBias(x, b), &[x, b])
    }

    /// Multiplies `x[n×c×…]` by a per-sample, per-channel factor `s[n×c]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        let (tx, ts) = (&self.node(x)?.value, &self.node(s)?.value);
        let sx = tx.shape();
        if sx.len() < 2 || ts.shape() != &sx[..2] {
            return Err(mismatch("scale_channels", sx, ts.shape()));
        }
        let inner: usize = sx[2..].iter().product();
        let sd = ts.data();
        let out = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * sd[i / inner])
            .collect();
        let value = Tensor::new(sx.to_vec(), out)?;
        self.push("scale_channels", value, Op::ScaleChannels(x, s), &[x, s])
    }

    /// `x[n×c×h×w] + strength · noise[n×h×w]`, noise broadcast over channels.
    pub fn noise_inject(
        &mut self,
        x: Var,
        noise: &Tensor<S>,
        strength: Var,
    ) -> Result<Var, TensorError> {
        let (tx, ts) = (&self.node(x)?.value, &self.node(strength)?.value);
        let sx = tx.shape();
        if sx.len() != 4 || noise.shape() != [sx[0], sx[2], sx[3]] || ts.numel() != 1 {
            return Err(mismatch("noise_inject", sx, noise.shape()));
        }
        let (c, hw) = (sx[1], sx[2] * sx[3]);
        let st = ts.data()[0];
        let nd = noise.data();
        let out = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + st * nd[(i / (c * hw)) * hw + i % hw])
            .collect();
        let value = Tensor::new(sx.to_vec(), out)?;
        let rec = Op::NoiseInject {
            x,
            noise: noise.data().to_vec(),
            strength,
        };
        self.push("noise_inject", value, rec, &[x, strength])
    }

    /// Mean over the trailing spatial axes: `[n×c×h×w] -> [n×c]`.
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let t = &self.node(x)?.value;
        let s = t.shape();
        if s.len() != 4 {
            return Err(TensorError::InvalidShape {
                op: "spatial_mean",
                shape: s.to_vec(),
                reason: "expected [n, c, h, w]",
            });
        }
        let hw = s[2] * s[3];
        let inv = S::one() / S::from_usize(hw).expect("count fits");
        let out = t
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().copied().sum::<S>() * inv)
            .collect();
        let value = Tensor::new(vec![s[0], s[1]], out)?;
        self.push("spatial_mean", value, Op::SpatialMean(x), &[x])
    }

    /// Stacks `n` copies of `a` along a new leading axis.
    pub fn repeat_batch(&mut self, a: Var, n: usize) -> Result<Var, TensorError> {
        let t = &self.node(a)?.value;
        let mut shape = vec![n];
        shape.extend_from_slice(t.shape());
        let out = (0..n).flat_map(|_| t.data().iter().copied()).collect();
        let value = Tensor::new(shape, out)?;
        self.push("repeat_batch", value, Op::RepeatBatch(a, n), &[a])
    }

    /// Demodulation coefficients of a modulated convolution:
    /// `d[n,o] = (Σ_{i,u,v} (w[o,i,u,v]·s[n,i])² + eps)^(-1/2)`.
    pub fn demodulate(&mut self, w: Var, s: Var, eps: S) -> Result<Var, TensorError> {
        let (tw, ts) = (&self.node(w)?.value, &self.node(s)?.value);
        let (sw, ss) = (tw.shape(), ts.shape());
        if sw.len() != 4 || ss.len() != 2 || ss[1] != sw[1] {
            return Err(mismatch("demodulate", sw, ss));
        }
        let w2 = squared_kernel_norms(tw);
        let (n, c_in, c_out) = (ss[0], ss[1], sw[0]);
        let sd = ts.data();
        let mut out = Vec::with_capacity(n * c_out);
        for b in 0..n {
            for o in 0..c_out {
                let mut q = eps;
                for i in 0..c_in {
                    q += sd[b * c_in + i] * sd[b * c_in + i] * w2[o * c_in + i];
                }
                out.push(q.sqrt().recip());
            }
        }
        let value = Tensor::new(vec![n, c_out], out)?;
        self.push("demodulate", value, Op::Demodulate { w, s }, &[w, s])
    }

    /// Reverse sweep from a scalar `loss`. Every node that depends on a
    /// `requires_grad` leaf receives `d loss / d node`; contributions from
    /// multiple consumers add up.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        self.check(loss)?;
        let lv = &self.nodes[loss.idx].value;
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        if !self.nodes[loss.idx].needs_grad {
            return Ok(());
        }
        self.nodes[loss.idx].grad = Some(vec![S::one()]);
        for i in (0..=loss.idx).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = node.grad.as_deref() else {
                continue;
            };
            propagate(before, node, g);
        }
        for node in &self.nodes {
            if let Some(g) = &node.grad {
                check_finite("backward", g)?;
            }
        }
        Ok(())
    }
}

fn squared_kernel_norms<S: Scalar>(w: &Tensor<S>) -> Vec<S> {
    let s = w.shape();
    let kk = s[2] * s[3];
    w.data()
        .chunks(kk)
        .map(|c| c.iter().map(|&v| v * v).sum())
        .collect()
}

fn permute_data<S: Scalar>(data: &[S], shape: &[usize], axes: &[usize]) -> Vec<S> {
    let nd = shape.len();
    let mut in_strides = vec![1usize; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; nd];
    for _ in 0..data.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(data[off]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

/// Pushes the gradient `g` of `node` into its inputs (all stored in `before`).
fn propagate<S: Scalar>(before: &mut [Node<S>], node: &Node<S>, g: &[S]) {
    let wants = |before: &[Node<S>], v: Var| before[v.idx].needs_grad;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (sa, sb) = (
                before[a.idx].value.shape().to_vec(),
                before[b.idx].value.shape().to_vec(),
            );
            let (m, n, p) = (sa[0], sa[1], sb[1]);
            if wants(before, *a) {
                let ga = kernels::matmul_nt(g, before[b.idx].value.data(), m, n, p);
                accumulate(&mut before[a.idx].grad, ga);
            }
            if wants(before, *b) {
                let gb = kernels::matmul_tn(before[a.idx].value.data(), g, m, n, p);
                accumulate(&mut before[b.idx].grad, gb);
            }
        }
        Op::Transpose(a) => {
            if wants(before, *a) {
                let s = before[a.idx].value.shape();
                let (r, c) = (s[0], s[1]);
                // g is [c×r]; the input gradient is its transpose.
                let ga = (0..r * c).map(|i| g[(i % c) * r + i / c]).collect();
                accumulate(&mut before[a.idx].grad, ga);
            }
        }
        Op::Conv2d { x, w, dims } => {
            let (wx, ww) = (wants(before, *x), wants(before, *w));
            let (gx, gw) = kernels::conv2d_backward(
                before[x.idx].value.data(),
                before[w.idx].value.data(),
                g,
                *dims,
                wx,
                ww,
            );
            if let Some(gx) = gx {
                accumulate(&mut before[x.idx].grad, gx);
            }
            if let Some(gw) = gw {
                accumulate(&mut before[w.idx].grad, gw);
            }
        }
        Op::Add(a, b) => {
            if wants(before, *a) {
                accumulate(&mut before[a.idx].grad, g.to_vec());
            }
            if wants(before, *b) {
                accumulate(&mut before[b.idx].grad, g.to_vec());
            }
        }
        Op::Sub(a, b) => {
            if wants(before, *a) {
                accumulate(&mut before[a.idx].grad, g.to_vec());
            }
            if wants(before, *b) {
                accumulate(&mut before[b.idx].grad, g.iter().map(|&v| -v).collect());
            }
        }
        Op::Mul(a, b) => {
            if wants(before, *a) {
                let bd = before[b.idx].value.data();
                let ga = g.iter().zip(bd).map(|(&gv, &bv)| gv * bv).collect();
                accumulate(&mut before[a.idx].grad, ga);
            }
            if wants(before, *b) {
                let ad = before[a.idx].value.data();
                let gb = g.iter().zip(ad).map(|(&gv, &av)| gv * av).collect();
                accumulate(&mut before[b.idx].grad, gb);
            }
        }
        Op::Scale(a, s) => {
            let ga = g.iter().map(|&v| v * *s).collect();
            accumulate(&mut before[a.idx].grad, ga);
        }
        Op::Relu(a) => {
            let xd = before[a.idx].value.data();
            let ga = g
                .iter()
                .zip(xd)
                .map(|(&gv, &xv)| if xv >= S::zero() { gv } else { S::zero() })
                .collect();
            accumulate(&mut before[a.idx].grad, ga);
        }
        Op::LeakyRelu(a, slope) => {
            let xd = before[a.idx].value.data();
            let ga = g
                .iter()
                .zip(xd)
                .map(|(&gv, &xv)| if xv >= S::zero() { gv } else { gv * *slope })
                .collect();
            accumulate(&mut before[a.idx].grad, ga);
        }
        Op::Tanh(a) => {
            let yd = node.value.data();
            let ga = g
                .iter()
                .zip(yd)
                .map(|(&gv, &y)| gv * (S::one() - y * y))
                .collect();
            accumulate(&mut before[a.idx].grad, ga);
        }
        Op::Upsample2x(a) => {
            let s = before[a.idx].value.shape();
            let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
            let planes = before[a.idx].value.numel() / (h * w);
            accumulate(
                &mut before[a.idx].grad,
                kernels::upsample2x_backward(g, planes, h, w),
            );
        }
        Op::AvgPool2x(a) => {
            let s = before[a.idx].value.shape();
            let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
            let planes = before[a.idx].value.numel() / (h * w);
            accumulate(
                &mut before[a.idx].grad,
                kernels::avgpool2x_backward(g, planes, h, w),
            );
        }
        Op::Sum(a) => {
            let n = before[a.idx].value.numel();
            accumulate(&mut before[a.idx].grad, vec![g[0]; n]);
        }
        Op::Mean(a) => {
            let n = before[a.idx].value.numel();
            let v = g[0] / S::from_usize(n).expect("count fits");
            accumulate(&mut before[a.idx].grad, vec![v; n]);
        }
        Op::Reshape(a) => accumulate(&mut before[a.idx].grad, g.to_vec()),
        Op::Permute(a, axes) => {
            let out_shape = node.value.shape();
            let inv = inverse_axes(axes);
            accumulate(&mut before[a.idx].grad, permute_data(g, out_shape, &inv));
        }
        Op::AddBias(x, b) => {
            let s = node.value.shape();
            let c = s[1];
            let inner: usize = s[2..].iter().product();
            if wants(before, *x) {
                accumulate(&mut before[x.idx].grad, g.to_vec());
            }
            if wants(before, *b) {
                let mut gb = vec![S::zero(); c];
                for (i, &gv) in g.iter().enumerate() {
                    gb[(i / inner) % c] += gv;
                }
                accumulate(&mut before[b.idx].grad, gb);
            }
        }
        Op::ScaleChannels(x, s) => {
            let shape = node.value.shape();
            let inner: usize = shape[2..].iter().product();
            if wants(before, *x) {
                let sd = before[s.idx].value.data();
                let gx = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gv)| gv * sd[i / inner])
                    .collect();
                accumulate(&mut before[x.idx].grad, gx);
            }
            if wants(before, *s) {
                let xd = before[x.idx].value.data();
                let gs = g
                    .chunks(inner)
                    .zip(xd.chunks(inner))
                    .map(|(gc, xc)| gc.iter().zip(xc).map(|(&a, &b)| a * b).sum())
                    .collect();
                accumulate(&mut before[s.idx].grad, gs);
            }
        }
        Op::NoiseInject { x, noise, strength } => {
            if wants(before, *x) {
                accumulate(&mut before[x.idx].grad, g.to_vec());
            }
            if wants(before, *strength) {
                let s = node.value.shape();
                let (c, hw) = (s[1], s[2] * s[3]);
                let total: S = g
                    .iter()
                    .enumerate()
                    .map(|(i, &gv)| gv * noise[(i / (c * hw)) * hw + i % hw])
                    .sum();
                accumulate(&mut before[strength.idx].grad, vec![total]);
            }
        }
        Op::SpatialMean(x) => {
            let s = before[x.idx].value.shape();
            let hw = s[2] * s[3];
            let inv = S::one() / S::from_usize(hw).expect("count fits");
            let gx = g
                .iter()
                .flat_map(|&gv| std::iter::repeat(gv * inv).take(hw))
                .collect();
            accumulate(&mut before[x.idx].grad, gx);
        }
        Op::RepeatBatch(a, n) => {
            let m = before[a.idx].value.numel();
            let mut ga = vec![S::zero(); m];
            for rep in 0..*n {
                for (acc, &gv) in ga.iter_mut().zip(&g[rep * m..(rep + 1) * m]) {
                    *acc += gv;
                }
            }
            accumulate(&mut before[a.idx].grad, ga);
        }
        Op::Demodulate { w, s } => {
            // d = (q + eps)^(-1/2), dd/dq = -d³/2, q = Σ_i s_i² W2[o,i].
            let sw = before[w.idx].value.shape().to_vec();
            let (c_out, c_in, kk) = (sw[0], sw[1], sw[2] * sw[3]);
            let n = before[s.idx].value.shape()[0];
            let d = node.value.data();
            let gq: Vec<S> = g
                .iter()
                .zip(d)
                .map(|(&gv, &dv)| gv * dv * dv * dv * S::from_f64_lossy(-0.5))
                .collect();
            if wants(before, *s) {
                let w2 = squared_kernel_norms(&before[w.idx].value);
                let sd = before[s.idx].value.data();
                let mut gs = vec![S::zero(); n * c_in];
                for b in 0..n {
                    for o in 0..c_out {
                        let gqv = gq[b * c_out + o];
                        for i in 0..c_in {
                            gs[b * c_in + i] +=
                                gqv * S::from_f64_lossy(2.0) * sd[b * c_in + i] * w2[o * c_in + i];
                        }
                    }
                }
                accumulate(&mut before[s.idx].grad, gs);
            }
            if wants(before, *w) {
                let sd = before[s.idx].value.data();
                let wd = before[w.idx].value.data();
                let mut gw = vec![S::zero(); wd.len()];
                for o in 0..c_out {
                    for i in 0..c_in {
                        let mut coef = S::zero();
                        for b in 0..n {
                            coef += gq[b * c_out + o] * sd[b * c_in + i] * sd[b * c_in + i];
                        }
                        let base = (o * c_in + i) * kk;
                        for j in 0..kk {
                            gw[base + j] = coef * S::from_f64_lossy(2.0) * wd[base + j];
                        }
                    }
                }
                accumulate(&mut before[w.idx].grad, gw);
            }
        }
    }
}
