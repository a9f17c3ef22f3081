use statrs::function::gamma::{digamma, ln_gamma};

use super::{ParamId, ParamStore, Result, Tensor, TensorError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
struct Conv {
    c_in: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    ph: usize,
    pw: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `a * x + c`
    Affine(Var, f64),
    MatVec(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    Lgamma(Var),
    Softmax(Var),
    Sum(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Reshape(Var),
    Conv2d { x: Var, k: Var, b: Var, geom: Conv },
    MaxPool { x: Var, argmax: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Ordered record of one forward pass. Nodes are appended as they are
/// computed, so reverse insertion order is a reverse topological order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    /// Constant input; receives no gradient.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    fn zip(&mut self, op: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, node: Op) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape(op, x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| f(*p, *q)).collect();
        let t = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(t, node))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, node: Op) -> Var {
        let x = self.value(a);
        let data = x.data().iter().map(|v| f(*v)).collect();
        let t = Tensor::new(x.shape().to_vec(), data).expect("same length");
        self.push(t, node)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |p, q| p + q, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |p, q| p - q, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |p, q| p * q, Op::Mul(a, b))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        self.map(a, |v| scale * v + shift, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    /// `W x` for `W` of shape `[out, in]` and `x` of length `in`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        let (wt, xt) = (self.value(w), self.value(x));
        if wt.shape().len() != 2 || wt.shape()[1] != xt.len() {
            return Err(TensorError::shape("matvec", format!("{:?} x {:?}", wt.shape(), xt.shape())));
        }
        let (rows, cols) = (wt.shape()[0], wt.shape()[1]);
        let (wd, xd) = (wt.data(), xt.data());
        let out = (0..rows).map(|i| wd[i * cols..(i + 1) * cols].iter().zip(xd).map(|(a, b)| a * b).sum()).collect();
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x)))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |v| v.max(0.0), Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Log(a))
    }

    pub fn lgamma(&mut self, a: Var) -> Var {
        self.map(a, ln_gamma, Op::Lgamma(a))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = super::softmax(self.value(a).data())?;
        Ok(self.push(Tensor::vector(out), Op::Softmax(a)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        Ok(self.sum(p))
    }

    /// Flat concatenation of the inputs' buffers.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts.iter().flat_map(|v| self.value(*v).data().iter().copied()).collect();
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    /// Flat slice `[start, start + len)` of the buffer.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.len() {
            return Err(TensorError::shape("slice", format!("{start}+{len} > {}", x.len())));
        }
        let t = Tensor::vector(x.data()[start..start + len].to_vec());
        Ok(self.push(t, Op::Slice(a, start)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        Ok(self.push(t, Op::Reshape(a)))
    }

    /// Cross-correlation of `x: [c_in, h, w]` with `k: [c_out, c_in, kh, kw]`
    /// plus bias `b: [c_out]`, zero padding `pad = (rows, cols)` on both sides.
    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, pad: (usize, usize)) -> Result<Var> {
        let (ph, pw) = pad;
        let (xt, kt, bt) = (self.value(x), self.value(k), self.value(b));
        let (xs, ks) = (xt.shape(), kt.shape());
        if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] || bt.len() != ks[0] || stride == 0 {
            return Err(TensorError::shape(
                "conv2d",
                format!("input {xs:?}, kernel {ks:?}, bias {:?}, stride {stride}", bt.shape()),
            ));
        }
        let (c_in, h, w) = (xs[0], xs[1], xs[2]);
        let (c_out, kh, kw) = (ks[0], ks[2], ks[3]);
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(TensorError::shape("conv2d", format!("kernel {kh}x{kw} larger than padded {h}x{w}")));
        }
        let ho = (h + 2 * ph - kh) / stride + 1;
        let wo = (w + 2 * pw - kw) / stride + 1;
        let (xd, kd, bd) = (xt.data(), kt.data(), bt.data());
        let mut out = vec![0.0; c_out * ho * wo];
        for co in 0..c_out {
            for i in 0..ho {
                for j in 0..wo {
                    let mut s = bd[co];
                    for ci in 0..c_in {
                        for a in 0..kh {
                            let r = (i * stride + a) as isize - ph as isize;
                            if r < 0 || r >= h as isize {
                                continue;
                            }
                            for c in 0..kw {
                                let q = (j * stride + c) as isize - pw as isize;
                                if q < 0 || q >= w as isize {
                                    continue;
                                }
                                s += kd[((co * c_in + ci) * kh + a) * kw + c]
                                    * xd[(ci * h + r as usize) * w + q as usize];
                            }
                        }
                    }
                    out[(co * ho + i) * wo + j] = s;
                }
            }
        }
        let geom = Conv { c_in, h, w, kh, kw, stride, ph, pw };
        let t = Tensor::new(vec![c_out, ho, wo], out)?;
        Ok(self.push(t, Op::Conv2d { x, k, b, geom }))
    }

    /// Non-overlapping max pool over the last two axes of `[c, h, w]`;
    /// trailing rows/columns that do not fill a window are dropped.
    pub fn max_pool(&mut self, x: Var, ph: usize, pw: usize) -> Result<Var> {
        let xt = self.value(x);
        let s = xt.shape();
        if s.len() != 3 || ph == 0 || pw == 0 || s[1] < ph || s[2] < pw {
            return Err(TensorError::shape("max_pool", format!("input {s:?}, window {ph}x{pw}")));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let (ho, wo) = (h / ph, w / pw);
        let xd = xt.data();
        let mut out = Vec::with_capacity(c * ho * wo);
        let mut argmax = Vec::with_capacity(c * ho * wo);
        for ch in 0..c {
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = usize::MAX;
                    for a in 0..ph {
                        for b in 0..pw {
                            let idx = (ch * h + i * ph + a) * w + j * pw + b;
                            if best == usize::MAX || xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xd[best]);
                    argmax.push(best);
                }
            }
        }
        let t = Tensor::new(vec![c, ho, wo], out)?;
        Ok(self.push(t, Op::MaxPool { x, argmax }))
    }

    /// Reverse sweep from the scalar `loss`; parameter gradients are added
    /// to the store (frozen parameters are skipped). Consumes the tape.
    pub fn backward(self, loss: Var, store: &mut ParamStore) {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.len()]);
        let nodes = self.nodes;

        fn acc(grads: &mut [Option<Vec<f64>>], nodes: &[Node], v: Var, f: impl Fn(usize) -> f64) {
            let n = nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            for (i, g) in slot.iter_mut().enumerate() {
                *g += f(i);
            }
        }

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            let y = node.value.data();
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    let p = store.get_mut(*id);
                    if p.requires_grad {
                        for (pg, gi) in p.grad.iter_mut().zip(&g) {
                            *pg += gi;
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc(&mut grads, &nodes, *a, |i| g[i]);
                    acc(&mut grads, &nodes, *b, |i| g[i]);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, &nodes, *a, |i| g[i]);
                    acc(&mut grads, &nodes, *b, |i| -g[i]);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                    acc(&mut grads, &nodes, *a, |i| g[i] * bv[i]);
                    acc(&mut grads, &nodes, *b, |i| g[i] * av[i]);
                }
                Op::Affine(a, s) => acc(&mut grads, &nodes, *a, |i| g[i] * s),
                Op::MatVec(w, x) => {
                    let (wd, xd) = (nodes[w.0].value.data(), nodes[x.0].value.data());
                    let cols = xd.len();
                    acc(&mut grads, &nodes, *w, |k| g[k / cols] * xd[k % cols]);
                    acc(&mut grads, &nodes, *x, |j| (0..g.len()).map(|i| g[i] * wd[i * cols + j]).sum());
                }
                Op::Tanh(a) => acc(&mut grads, &nodes, *a, |i| g[i] * (1.0 - y[i] * y[i])),
                Op::Sigmoid(a) => acc(&mut grads, &nodes, *a, |i| g[i] * y[i] * (1.0 - y[i])),
                Op::Relu(a) => {
                    let x = nodes[a.0].value.data();
                    acc(&mut grads, &nodes, *a, |i| if x[i] > 0.0 { g[i] } else { 0.0 });
                }
                Op::Exp(a) => acc(&mut grads, &nodes, *a, |i| g[i] * y[i]),
                Op::Log(a) => {
                    let x = nodes[a.0].value.data();
                    acc(&mut grads, &nodes, *a, |i| g[i] / x[i]);
                }
                Op::Lgamma(a) => {
                    let x = nodes[a.0].value.data();
                    acc(&mut grads, &nodes, *a, |i| g[i] * digamma(x[i]));
                }
                Op::Softmax(a) => {
                    let gy: f64 = g.iter().zip(y).map(|(p, q)| p * q).sum();
                    acc(&mut grads, &nodes, *a, |i| y[i] * (g[i] - gy));
                }
                Op::Sum(a) => acc(&mut grads, &nodes, *a, |_| g[0]),
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = nodes[p.0].value.len();
                        acc(&mut grads, &nodes, *p, |i| g[off + i]);
                        off += n;
                    }
                }
                Op::Slice(a, start) => {
                    let (s, n) = (*start, g.len());
                    acc(&mut grads, &nodes, *a, |i| if i >= s && i < s + n { g[i - s] } else { 0.0 });
                }
                Op::Reshape(a) => acc(&mut grads, &nodes, *a, |i| g[i]),
                Op::Conv2d { x, k, b, geom } => {
                    let Conv { c_in, h, w, kh, kw, stride, ph, pw } = *geom;
                    let os = node.value.shape();
                    let (c_out, ho, wo) = (os[0], os[1], os[2]);
                    let (xd, kd) = (nodes[x.0].value.data(), nodes[k.0].value.data());
                    let mut gx = vec![0.0; xd.len()];
                    let mut gk = vec![0.0; kd.len()];
                    let mut gb = vec![0.0; c_out];
                    for co in 0..c_out {
                        for i in 0..ho {
                            for j in 0..wo {
                                let go = g[(co * ho + i) * wo + j];
                                if go == 0.0 {
                                    continue;
                                }
                                gb[co] += go;
                                for ci in 0..c_in {
                                    for a in 0..kh {
                                        let r = (i * stride + a) as isize - ph as isize;
                                        if r < 0 || r >= h as isize {
                                            continue;
                                        }
                                        for c in 0..kw {
                                            let q = (j * stride + c) as isize - pw as isize;
                                            if q < 0 || q >= w as isize {
                                                continue;
                                            }
                                            let xi = (ci * h + r as usize) * w + q as usize;
                                            let ki = ((co * c_in + ci) * kh + a) * kw + c;
                                            gk[ki] += go * xd[xi];
                                            gx[xi] += go * kd[ki];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    acc(&mut grads, &nodes, *x, |i| gx[i]);
                    acc(&mut grads, &nodes, *k, |i| gk[i]);
                    acc(&mut grads, &nodes, *b, |i| gb[i]);
                }
                Op::MaxPool { x, argmax } => {
                    let mut gx = vec![0.0; nodes[x.0].value.len()];
                    for (o, &src) in argmax.iter().enumerate() {
                        gx[src] += g[o];
                    }
                    acc(&mut grads, &nodes, *x, |i| gx[i]);
                }
            }
        }
    }
}
