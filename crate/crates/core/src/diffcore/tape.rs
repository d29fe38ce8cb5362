use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    AddScalar(usize),
    Relu(usize),
    LeakyRelu(usize, T),
    Pow(usize, T),
    Exp(usize),
    Clamp(usize, T, T),
    Sigmoid(usize),
    MatMul(usize, usize),
    Transpose(usize),
    Reshape(usize),
    Concat(usize, usize),
    Conv2d { input: usize, kernel: usize, bias: usize },
    AvgPool2(usize),
    Resize(usize),
    SoftmaxRows(usize),
    Attention { q: usize, k: usize, v: usize, lse: Vec<T> },
    Sum(usize),
    Mean(usize),
    L1Distance(usize, usize),
    SqFrobenius(usize),
    InnerProduct(usize, usize),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Linear record of executed operations, replayed in reverse by
/// [`Tape::backward`].
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// A tape belongs to one thread; independent samples use independent tapes.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints of the leaves that requested gradients.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of `v`, or `None` when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn broadcastable(a: &[usize], b: &[usize]) -> bool {
    a == b
        || b.iter().product::<usize>() == 1
        || (b.len() + 1 == a.len() && a[1..] == *b)
}

fn sum_into_broadcast<T: Scalar>(g: &[T], bn: usize) -> Vec<T> {
    if g.len() == bn {
        return g.to_vec();
    }
    let mut out = vec![T::zero(); bn];
    for chunk in g.chunks(bn) {
        out.iter_mut().zip(chunk).for_each(|(o, x)| *o += *x);
    }
    out
}

fn accumulate<T: Scalar>(grads: &mut [Option<Vec<T>>], idx: usize, g: Vec<T>) {
    match &mut grads[idx] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
        slot @ None => *slot = Some(g),
    }
}

fn spatial(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    match shape {
        [.., h, w] => Ok((shape.iter().product::<usize>() / (h * w), *h, *w)),
        _ => Err(Error::shape(format!("{what} needs rank >= 2, got {shape:?}"))),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Constant, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        let op = if requires_grad { op } else { Op::Constant };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, i: usize) -> &[T] {
        self.nodes[i].value.data()
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !broadcastable(ta.shape(), tb.shape()) {
            return Err(Error::shape(format!(
                "{name}: cannot broadcast {:?} onto {:?}",
                tb.shape(),
                ta.shape()
            )));
        }
        let bn = tb.numel();
        let (da, db) = (ta.data(), tb.data());
        let data = if bn == da.len() {
            da.iter().zip(db).map(|(x, y)| f(*x, *y)).collect()
        } else {
            da.chunks(bn).flat_map(|c| c.iter().zip(db).map(|(x, y)| f(*x, *y))).collect()
        };
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    fn unary(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let value = self.value(a).map(f);
        self.push(value, op, &[a.0])
    }

    /// `a + b`; `b` may be a scalar or broadcast across the leading axis of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::Scale(a.0, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: T) -> Var {
        self.unary(a, Op::AddScalar(a.0), |x| x + c)
    }

    /// `max(a, 0)`.
    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a.0), |x| x.max(T::zero()))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: T) -> Var {
        self.unary(a, Op::LeakyRelu(a.0, slope), |x| if x > T::zero() { x } else { x * slope })
    }

    /// Elementwise `a^p`; negative bases need an integer exponent.
    pub fn pow(&mut self, a: Var, p: T) -> Result<Var> {
        if p.fract() != T::zero() && self.value(a).data().iter().any(|x| *x < T::zero()) {
            return Err(Error::Domain(format!("negative base with non-integer exponent {p}")));
        }
        Ok(self.unary(a, Op::Pow(a.0, p), |x| x.powf(p)))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.0), T::exp)
    }

    pub fn clamp(&mut self, a: Var, lo: T, hi: T) -> Var {
        self.unary(a, Op::Clamp(a.0, lo, hi), |x| x.max(lo).min(hi))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a.0), |x| T::one() / (T::one() + (-x).exp()))
    }

    /// `[m, k] x [k, n] -> [m, n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (m, k, n) = match (sa, sb) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => return Err(Error::shape(format!("matmul {sa:?} x {sb:?}"))),
        };
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, k, n, self.data(a.0), false, self.data(b.0), false, &mut out, false);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (r, c) = match self.shape(a) {
            [r, c] => (*r, *c),
            s => return Err(Error::shape(format!("transpose needs rank 2, got {s:?}"))),
        };
        let src = self.data(a.0);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(Tensor::from_parts(vec![c, r], out), Op::Transpose(a.0), &[a.0]))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(a).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(a.0), &[a.0]))
    }

    /// Concatenation along axis 0.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.is_empty() || sa.len() != sb.len() || sa[1..] != sb[1..] {
            return Err(Error::shape(format!("concat {sa:?} with {sb:?}")));
        }
        let mut shape = sa.to_vec();
        shape[0] += sb[0];
        let mut data = self.data(a.0).to_vec();
        data.extend_from_slice(self.data(b.0));
        Ok(self.push(Tensor::from_parts(shape, data), Op::Concat(a.0, b.0), &[a.0, b.0]))
    }

    /// 3x3 cross-correlation, stride 1, zero padding 1:
    /// `[c_in, h, w] * [c_out, c_in, 3, 3] + [c_out] -> [c_out, h, w]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (si, sk, sb) = (self.shape(input), self.shape(kernel), self.shape(bias));
        let (cin, h, w, cout) = match (si, sk, sb) {
            ([cin, h, w], [cout, kin, 3, 3], [bout]) if cin == kin && cout == bout => {
                (*cin, *h, *w, *cout)
            }
            _ => {
                return Err(Error::shape(format!(
                    "conv2d input {si:?}, kernel {sk:?}, bias {sb:?}"
                )))
            }
        };
        let hw = h * w;
        let cols = kernels::im2col(self.data(input.0), cin, h, w);
        let mut out = vec![T::zero(); cout * hw];
        for (row, b) in out.chunks_mut(hw).zip(self.data(bias.0)) {
            row.iter_mut().for_each(|x| *x = *b);
        }
        T::gemm(cout, cin * 9, hw, self.data(kernel.0), false, &cols, false, &mut out, true);
        Ok(self.push(
            Tensor::from_parts(vec![cout, h, w], out),
            Op::Conv2d { input: input.0, kernel: kernel.0, bias: bias.0 },
            &[input.0, kernel.0, bias.0],
        ))
    }

    /// 2x2 average pooling over the last two axes.
    pub fn avg_pool2(&mut self, a: Var) -> Result<Var> {
        let (planes, h, w) = spatial(self.shape(a), "avg_pool2")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape(format!("avg_pool2 needs even dims, got {h}x{w}")));
        }
        let out = kernels::avg_pool2_forward(self.data(a.0), planes, h, w);
        let mut shape = self.shape(a).to_vec();
        let r = shape.len();
        shape[r - 2] = h / 2;
        shape[r - 1] = w / 2;
        Ok(self.push(Tensor::from_parts(shape, out), Op::AvgPool2(a.0), &[a.0]))
    }

    /// Bilinear resize of the last two axes (half-pixel centres, edge clamp).
    pub fn resize_bilinear(&mut self, a: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let (planes, h, w) = spatial(self.shape(a), "resize_bilinear")?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::shape("resize_bilinear to an empty size"));
        }
        let out = kernels::resize_forward(self.data(a.0), planes, (h, w), (out_h, out_w));
        let mut shape = self.shape(a).to_vec();
        let r = shape.len();
        shape[r - 2] = out_h;
        shape[r - 1] = out_w;
        Ok(self.push(Tensor::from_parts(shape, out), Op::Resize(a.0), &[a.0]))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let cols = match self.shape(a) {
            [_, n] => *n,
            s => return Err(Error::shape(format!("softmax_rows needs rank 2, got {s:?}"))),
        };
        let out = kernels::softmax_rows_forward(self.data(a.0), cols);
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, out), Op::SoftmaxRows(a.0), &[a.0]))
    }

    /// Fused `softmax_rows(q k^T) v` for `q: [n, c]`, `k: [m, c]`,
    /// `v: [m, cv]`. Only per-row normalizers are kept for the reverse pass,
    /// never the `n x m` weight matrix.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        let (sq, sk, sv) = (self.shape(q), self.shape(k), self.shape(v));
        let d = match (sq, sk, sv) {
            ([n, c], [m, c2], [m2, cv]) if c == c2 && m == m2 => kernels::AttnDims { n: *n, m: *m, c: *c, cv: *cv },
            _ => return Err(Error::shape(format!("attention q {sq:?}, k {sk:?}, v {sv:?}"))),
        };
        let (out, lse) = kernels::attention_forward(self.data(q.0), self.data(k.0), self.data(v.0), d);
        Ok(self.push(
            Tensor::from_parts(vec![d.n, d.cv], out),
            Op::Attention { q: q.0, k: k.0, v: v.0, lse },
            &[q.0, k.0, v.0],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a.0), &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let s = self.value(a).mean();
        self.push(Tensor::scalar(s), Op::Mean(a.0), &[a.0])
    }

    /// `sum |a - b|`.
    pub fn l1_distance(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self.binary(a, b, "l1_distance", |x, y| (x - y).abs())?;
        Ok(self.push(Tensor::scalar(d.sum()), Op::L1Distance(a.0, b.0), &[a.0, b.0]))
    }

    /// `sum a^2`.
    pub fn sq_frobenius(&mut self, a: Var) -> Var {
        let s = self.data(a.0).iter().map(|x| *x * *x).sum();
        self.push(Tensor::scalar(s), Op::SqFrobenius(a.0), &[a.0])
    }

    /// `sum a * b`.
    pub fn inner_product(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.binary(a, b, "inner_product", |x, y| x * y)?;
        Ok(self.push(Tensor::scalar(p.sum()), Op::InnerProduct(a.0, b.0), &[a.0, b.0]))
    }

    /// Reverse pass from a one-element `loss`. Each node is visited once.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        let mut leaves: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(g) = grads[i].take() else { continue };
            if !node.requires_grad {
                continue;
            }
            let wants = |j: usize| self.nodes[j].requires_grad;
            let value = node.value.data();
            match node.op {
                Op::Leaf => {
                    leaves[i] = Some(Tensor::from_parts(node.value.shape().to_vec(), g));
                }
                Op::Constant => {}
                Op::Add(a, b) | Op::Sub(a, b) => {
                    if wants(b) {
                        let mut gb = sum_into_broadcast(&g, self.nodes[b].value.numel());
                        if matches!(node.op, Op::Sub(..)) {
                            gb.iter_mut().for_each(|x| *x = -*x);
                        }
                        accumulate(&mut grads, b, gb);
                    }
                    if wants(a) {
                        accumulate(&mut grads, a, g);
                    }
                }
                Op::Mul(a, b) | Op::InnerProduct(a, b) => {
                    let (da, db) = (self.data(a), self.data(b));
                    let bn = db.len();
                    let gi = |k: usize| if g.len() == 1 { g[0] } else { g[k] };
                    if wants(b) {
                        let prod: Vec<T> = da.iter().enumerate().map(|(k, x)| gi(k) * *x).collect();
                        accumulate(&mut grads, b, sum_into_broadcast(&prod, bn));
                    }
                    if wants(a) {
                        let ga = (0..da.len()).map(|k| gi(k) * db[k % bn]).collect();
                        accumulate(&mut grads, a, ga);
                    }
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, a, g.iter().map(|x| *x * c).collect());
                }
                Op::AddScalar(a) | Op::Reshape(a) => accumulate(&mut grads, a, g),
                Op::Relu(a) => {
                    let ga = g
                        .iter()
                        .zip(self.data(a))
                        .map(|(g, x)| if *x > T::zero() { *g } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, a, ga);
                }
                Op::LeakyRelu(a, slope) => {
                    let ga = g
                        .iter()
                        .zip(self.data(a))
                        .map(|(g, x)| if *x > T::zero() { *g } else { *g * slope })
                        .collect();
                    accumulate(&mut grads, a, ga);
                }
                Op::Pow(a, p) => {
                    let pm1 = p - T::one();
                    let ga =
                        g.iter().zip(self.data(a)).map(|(g, x)| *g * p * x.powf(pm1)).collect();
                    accumulate(&mut grads, a, ga);
                }
                Op::Exp(a) => {
                    accumulate(&mut grads, a, g.iter().zip(value).map(|(g, y)| *g * *y).collect());
                }
                Op::Clamp(a, lo, hi) => {
                    let ga = g
                        .iter()
                        .zip(self.data(a))
                        .map(|(g, x)| if *x >= lo && *x <= hi { *g } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, a, ga);
                }
                Op::Sigmoid(a) => {
                    let ga =
                        g.iter().zip(value).map(|(g, y)| *g * *y * (T::one() - *y)).collect();
                    accumulate(&mut grads, a, ga);
                }
                Op::MatMul(a, b) => {
                    let (sa, sb) = (self.nodes[a].value.shape(), self.nodes[b].value.shape());
                    let (m, k, n) = (sa[0], sa[1], sb[1]);
                    if wants(a) {
                        let mut ga = vec![T::zero(); m * k];
                        T::gemm(m, n, k, &g, false, self.data(b), true, &mut ga, false);
                        accumulate(&mut grads, a, ga);
                    }
                    if wants(b) {
                        let mut gb = vec![T::zero(); k * n];
                        T::gemm(k, m, n, self.data(a), true, &g, false, &mut gb, false);
                        accumulate(&mut grads, b, gb);
                    }
                }
                Op::Transpose(a) => {
                    let s = node.value.shape();
                    let (r, c) = (s[0], s[1]);
                    let mut ga = vec![T::zero(); r * c];
                    for i in 0..r {
                        for j in 0..c {
                            ga[j * r + i] = g[i * c + j];
                        }
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::Concat(a, b) => {
                    let split = self.nodes[a].value.numel();
                    if wants(b) {
                        accumulate(&mut grads, b, g[split..].to_vec());
                    }
                    if wants(a) {
                        accumulate(&mut grads, a, g[..split].to_vec());
                    }
                }
                Op::Conv2d { input, kernel, bias } => {
                    let si = self.nodes[input].value.shape();
                    let (cin, h, w) = (si[0], si[1], si[2]);
                    let cout = node.value.shape()[0];
                    let hw = h * w;
                    if wants(bias) {
                        let gb = g.chunks(hw).map(|r| r.iter().copied().sum()).collect();
                        accumulate(&mut grads, bias, gb);
                    }
                    if wants(kernel) {
                        let cols = kernels::im2col(self.data(input), cin, h, w);
                        let mut gk = vec![T::zero(); cout * cin * 9];
                        T::gemm(cout, hw, cin * 9, &g, false, &cols, true, &mut gk, false);
                        accumulate(&mut grads, kernel, gk);
                    }
                    if wants(input) {
                        let mut gcols = vec![T::zero(); cin * 9 * hw];
                        T::gemm(cin * 9, cout, hw, self.data(kernel), true, &g, false, &mut gcols, false);
                        accumulate(&mut grads, input, kernels::col2im(&gcols, cin, h, w));
                    }
                }
                Op::AvgPool2(a) => {
                    let (planes, h, w) = spatial(self.nodes[a].value.shape(), "avg_pool2")?;
                    accumulate(&mut grads, a, kernels::avg_pool2_backward(&g, planes, h, w));
                }
                Op::Resize(a) => {
                    let (planes, h, w) = spatial(self.nodes[a].value.shape(), "resize")?;
                    let (_, oh, ow) = spatial(node.value.shape(), "resize")?;
                    accumulate(&mut grads, a, kernels::resize_backward(&g, planes, (h, w), (oh, ow)));
                }
                Op::SoftmaxRows(a) => {
                    let cols = node.value.shape()[1];
                    accumulate(&mut grads, a, kernels::softmax_rows_backward(value, &g, cols));
                }
                Op::Attention { q, k, v, ref lse } => {
                    let (sq, sv) = (self.nodes[q].value.shape(), self.nodes[v].value.shape());
                    let d = kernels::AttnDims { n: sq[0], m: sv[0], c: sq[1], cv: sv[1] };
                    let (dq, dk, dv) =
                        kernels::attention_backward(self.data(q), self.data(k), self.data(v), value, lse, &g, d);
                    for (j, gj) in [(v, dv), (k, dk), (q, dq)] {
                        if wants(j) {
                            accumulate(&mut grads, j, gj);
                        }
                    }
                }
                Op::Sum(a) => {
                    let n = self.nodes[a].value.numel();
                    accumulate(&mut grads, a, vec![g[0]; n]);
                }
                Op::Mean(a) => {
                    let n = self.nodes[a].value.numel();
                    accumulate(&mut grads, a, vec![g[0] / T::from(n).unwrap(); n]);
                }
                Op::SqFrobenius(a) => {
                    let two = g[0] + g[0];
                    accumulate(&mut grads, a, self.data(a).iter().map(|x| two * *x).collect());
                }
                Op::L1Distance(a, b) => {
                    let (da, db) = (self.data(a), self.data(b));
                    let bn = db.len();
                    let sign: Vec<T> = (0..da.len())
                        .map(|k| {
                            let d = da[k] - db[k % bn];
                            if d > T::zero() {
                                g[0]
                            } else if d < T::zero() {
                                -g[0]
                            } else {
                                T::zero()
                            }
                        })
                        .collect();
                    if wants(b) {
                        let mut gb = sum_into_broadcast(&sign, bn);
                        gb.iter_mut().for_each(|x| *x = -*x);
                        accumulate(&mut grads, b, gb);
                    }
                    if wants(a) {
                        accumulate(&mut grads, a, sign);
                    }
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}
