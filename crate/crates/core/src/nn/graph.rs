//! Eager reverse-mode differentiation over dense row-major `f64` tensors.
//!
//! A [`Graph`] records every op as it is evaluated; [`Graph::backward`] then
//! walks the tape in reverse. Tensors share storage through `Arc`, so binding
//! parameters or re-inserting cached activations into a fresh graph is cheap.

use std::sync::Arc;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "shape {shape:?} does not match {} values", data.len());
        Self { shape, data: Arc::new(data) }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self::new(shape, vec![0.0; len])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Copy-on-write access to the values.
    pub fn data_mut(&mut self) -> &mut Vec<f64> {
        Arc::make_mut(&mut self.data)
    }

    fn with_shape(&self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.numel(), "cannot view {:?} as {shape:?}", self.shape);
        Self { shape, data: Arc::clone(&self.data) }
    }

    fn last_dim(&self) -> usize {
        *self.shape.last().expect("scalar tensors have no last dim")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Bmm { a: Var, b: Var, trans_b: bool },
    SplitHeads { x: Var, heads: usize },
    MergeHeads { x: Var, heads: usize },
    Softmax(Var),
    MaskedLogSoftmax { x: Var, blocked: Vec<bool> },
    ConcatLast(Vec<Var>),
    ConcatAxis1(Var, Var),
    NarrowAxis1 { x: Var, start: usize },
    BroadcastRows { x: Var, n: usize },
    MeanAxis1(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    GatherRows { x: Var, idx: Vec<usize> },
    Reshape(Var),
    ScaleRows(Var, Var),
    Conv1d(Var, Var),
    WeightedSum { x: Var, w: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients from one backward pass, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

/// `c = alpha * a * b + beta * c` on strided matrices (`a` is `m x k`, `b` is `k x n`).
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the debug assertions above spell out the extents every caller
    // guarantees; the three buffers are distinct borrows.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn acc<'a>(grads: &'a mut [Option<Vec<f64>>], v: Var, len: usize) -> &'a mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

impl Graph {
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

    /// A leaf: parameters and inputs alike.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// `x[..., k] @ w[k, m]`.
    pub fn matmul(&mut self, x: Var, w: Var) -> Var {
        let xs = self.value(x);
        let ws = self.value(w);
        assert_eq!(ws.shape().len(), 2, "matmul weight must be 2-D");
        let (k, m) = (ws.shape()[0], ws.shape()[1]);
        assert_eq!(xs.last_dim(), k, "matmul inner dims {:?} x {:?}", xs.shape(), ws.shape());
        let rows = xs.numel() / k;
        let mut out = vec![0.0; rows * m];
        gemm(rows, k, m, xs.data(), (k, 1), ws.data(), (m, 1), 0.0, &mut out, (m, 1));
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        self.push(Tensor::new(shape, out), Op::MatMul(x, w))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let xs = self.value(x);
        let m = xs.last_dim();
        assert_eq!(self.shape(b), &[m], "bias shape");
        let bd = self.data(b);
        let out: Vec<f64> = xs.data().chunks_exact(m).flat_map(|r| r.iter().zip(bd).map(|(a, c)| a + c)).collect();
        let shape = xs.shape().to_vec();
        self.push(Tensor::new(shape, out), Op::AddBias(x, b))
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "elementwise shapes differ");
        let out: Vec<f64> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| f(x, y)).collect();
        let shape = self.shape(a).to_vec();
        self.push(Tensor::new(shape, out), op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn map(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out: Vec<f64> = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(Tensor::new(shape, out), op)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.map(x, |v| v * c, Op::Scale(x, c))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, |v| 1.0 / (1.0 + (-v).exp()), Op::Sigmoid(x))
    }

    /// Batched `a[g] @ b[g]` (or `a[g] @ b[g]^T` with `trans_b`).
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (g, p, k) = dims3(self.shape(a));
        let (g2, b1, b2) = dims3(self.shape(b));
        assert_eq!(g, g2, "bmm batch");
        let (kb, q) = if trans_b { (b2, b1) } else { (b1, b2) };
        assert_eq!(k, kb, "bmm inner dims {:?} x {:?} (trans_b = {trans_b})", self.shape(a), self.shape(b));
        let bstr = if trans_b { (1, k) } else { (q, 1) };
        let mut out = vec![0.0; g * p * q];
        let (ad, bd) = (self.data(a), self.data(b));
        for i in 0..g {
            gemm(
                p,
                k,
                q,
                &ad[i * p * k..(i + 1) * p * k],
                (k, 1),
                &bd[i * k * q..(i + 1) * k * q],
                bstr,
                0.0,
                &mut out[i * p * q..(i + 1) * p * q],
                (q, 1),
            );
        }
        self.push(Tensor::new(vec![g, p, q], out), Op::Bmm { a, b, trans_b })
    }

    /// `[B, n, H*dk] -> [B*H, n, dk]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Var {
        let (b, n, d) = dims3(self.shape(x));
        assert_eq!(d % heads, 0, "{d} features do not split into {heads} heads");
        let dk = d / heads;
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for i in 0..n {
                for h in 0..heads {
                    let s = (bi * n + i) * d + h * dk;
                    let t = ((bi * heads + h) * n + i) * dk;
                    out[t..t + dk].copy_from_slice(&src[s..s + dk]);
                }
            }
        }
        self.push(Tensor::new(vec![b * heads, n, dk], out), Op::SplitHeads { x, heads })
    }

    /// `[B*H, n, dk] -> [B, n, H*dk]`.
    pub fn merge_heads(&mut self, x: Var, heads: usize) -> Var {
        let (bh, n, dk) = dims3(self.shape(x));
        let b = bh / heads;
        let d = heads * dk;
        let src = self.data(x);
        let mut out = vec![0.0; src.len()];
        for bi in 0..b {
            for i in 0..n {
                for h in 0..heads {
                    let s = ((bi * heads + h) * n + i) * dk;
                    let t = (bi * n + i) * d + h * dk;
                    out[t..t + dk].copy_from_slice(&src[s..s + dk]);
                }
            }
        }
        self.push(Tensor::new(vec![b, n, d], out), Op::MergeHeads { x, heads })
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        let m = xs.last_dim();
        let mut out = xs.data().to_vec();
        for row in out.chunks_exact_mut(m) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let shape = xs.shape().to_vec();
        self.push(Tensor::new(shape, out), Op::Softmax(x))
    }

    /// Log-softmax over the last dimension; `blocked` entries become `-inf`.
    pub fn masked_log_softmax(&mut self, x: Var, blocked: Vec<bool>) -> Var {
        let xs = self.value(x);
        assert_eq!(blocked.len(), xs.numel(), "mask size");
        let m = xs.last_dim();
        let mut out = xs.data().to_vec();
        for (row, mask) in out.chunks_exact_mut(m).zip(blocked.chunks_exact(m)) {
            let mx = row
                .iter()
                .zip(mask)
                .filter(|(_, &b)| !b)
                .map(|(v, _)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(mx.is_finite(), "every entry of a log-softmax row is blocked");
            let lse = mx + row.iter().zip(mask).filter(|(_, &b)| !b).map(|(v, _)| (v - mx).exp()).sum::<f64>().ln();
            for (v, &b) in row.iter_mut().zip(mask) {
                *v = if b { f64::NEG_INFINITY } else { *v - lse };
            }
        }
        let shape = xs.shape().to_vec();
        self.push(Tensor::new(shape, out), Op::MaskedLogSoftmax { x, blocked })
    }

    /// Concatenate along the last dimension; leading dims must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Var {
        let lead = &self.shape(parts[0])[..self.shape(parts[0]).len() - 1];
        let rows: usize = lead.iter().product();
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let s = self.shape(p);
                assert_eq!(&s[..s.len() - 1], lead, "concat leading dims");
                *s.last().unwrap()
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        self.push(Tensor::new(shape, out), Op::ConcatLast(parts.to_vec()))
    }

    /// `[B, p, d] ++ [B, q, d] -> [B, p+q, d]`.
    pub fn concat_axis1(&mut self, a: Var, b: Var) -> Var {
        let (bs, p, d) = dims3(self.shape(a));
        let (bs2, q, d2) = dims3(self.shape(b));
        assert_eq!((bs, d), (bs2, d2), "concat_axis1 shapes");
        let mut out = Vec::with_capacity(bs * (p + q) * d);
        for i in 0..bs {
            out.extend_from_slice(&self.data(a)[i * p * d..(i + 1) * p * d]);
            out.extend_from_slice(&self.data(b)[i * q * d..(i + 1) * q * d]);
        }
        self.push(Tensor::new(vec![bs, p + q, d], out), Op::ConcatAxis1(a, b))
    }

    /// Rows `start..start+len` along axis 1 of a `[B, n, d]` tensor.
    pub fn narrow_axis1(&mut self, x: Var, start: usize, len: usize) -> Var {
        let (bs, n, d) = dims3(self.shape(x));
        assert!(start + len <= n, "narrow out of range");
        let src = self.data(x);
        let mut out = Vec::with_capacity(bs * len * d);
        for i in 0..bs {
            out.extend_from_slice(&src[(i * n + start) * d..(i * n + start + len) * d]);
        }
        self.push(Tensor::new(vec![bs, len, d], out), Op::NarrowAxis1 { x, start })
    }

    /// `[B, d] -> [B, n, d]` by repetition.
    pub fn broadcast_rows(&mut self, x: Var, n: usize) -> Var {
        let s = self.shape(x);
        assert_eq!(s.len(), 2, "broadcast_rows expects [B, d]");
        let (b, d) = (s[0], s[1]);
        let src = self.data(x);
        let mut out = Vec::with_capacity(b * n * d);
        for i in 0..b {
            for _ in 0..n {
                out.extend_from_slice(&src[i * d..(i + 1) * d]);
            }
        }
        self.push(Tensor::new(vec![b, n, d], out), Op::BroadcastRows { x, n })
    }

    /// `[B, n, d] -> [B, d]`.
    pub fn mean_axis1(&mut self, x: Var) -> Var {
        let (b, n, d) = dims3(self.shape(x));
        let src = self.data(x);
        let mut out = vec![0.0; b * d];
        for i in 0..b {
            for j in 0..n {
                for k in 0..d {
                    out[i * d + k] += src[(i * n + j) * d + k];
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        self.push(Tensor::new(vec![b, d], out), Op::MeanAxis1(x))
    }

    /// Per-row normalization over the last dimension with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xs = self.value(x);
        let d = xs.last_dim();
        let (gd, bd) = (self.data(gain), self.data(bias));
        let rows = xs.numel() / d;
        let mut xhat = vec![0.0; xs.numel()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xs.numel()];
        for (r, row) in xs.data().chunks_exact(d).enumerate() {
            let mu = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / d as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[r] = s;
            for k in 0..d {
                let h = (row[k] - mu) * s;
                xhat[r * d + k] = h;
                out[r * d + k] = gd[k] * h + bd[k];
            }
        }
        let shape = xs.shape().to_vec();
        self.push(Tensor::new(shape, out), Op::LayerNorm { x, gain, bias, xhat, rstd })
    }

    /// Picks row `idx[b]` of batch entry `b`: `[B, n, d] -> [B, d]`, or `[B, n] -> [B]`.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Var {
        let s = self.shape(x).to_vec();
        let (b, n, d, out_shape) = match s.len() {
            2 => (s[0], s[1], 1, vec![s[0]]),
            3 => (s[0], s[1], s[2], vec![s[0], s[2]]),
            _ => panic!("gather_rows expects a 2-D or 3-D tensor, got {s:?}"),
        };
        assert_eq!(idx.len(), b, "one index per batch entry");
        let src = self.data(x);
        let mut out = Vec::with_capacity(b * d);
        for (i, &j) in idx.iter().enumerate() {
            assert!(j < n, "gather index {j} out of range {n}");
            out.extend_from_slice(&src[(i * n + j) * d..(i * n + j + 1) * d]);
        }
        self.push(Tensor::new(out_shape, out), Op::GatherRows { x, idx: idx.to_vec() })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let t = self.value(x).with_shape(shape);
        self.push(t, Op::Reshape(x))
    }

    /// `x[r, :] * s[r]` for `x: [R, m]`, `s: [R]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Var {
        let xs = self.value(x);
        let m = xs.last_dim();
        let rows = xs.numel() / m;
        assert_eq!(self.value(s).numel(), rows, "scale_rows needs one factor per row");
        let sd = self.data(s);
        let out: Vec<f64> =
            xs.data().chunks_exact(m).zip(sd).flat_map(|(r, &c)| r.iter().map(move |v| v * c)).collect();
        let shape = xs.shape().to_vec();
        self.push(Tensor::new(shape, out), Op::ScaleRows(x, s))
    }

    /// Valid 1-D cross-correlation of each row with every kernel in `w: [C, K]`,
    /// channels summed: `y[r, j] = sum_c sum_k w[c, k] x[r, j + k]`.
    pub fn conv1d(&mut self, x: Var, w: Var) -> Var {
        let xs = self.value(x);
        let ws = self.value(w);
        let len = xs.last_dim();
        let (c, k) = (ws.shape()[0], ws.shape()[1]);
        assert!(k <= len, "kernel wider than signal");
        let out_len = len - k + 1;
        let rows = xs.numel() / len;
        let mut out = vec![0.0; rows * out_len];
        for r in 0..rows {
            let row = &xs.data()[r * len..(r + 1) * len];
            for ch in 0..c {
                let kern = &ws.data()[ch * k..(ch + 1) * k];
                for j in 0..out_len {
                    out[r * out_len + j] += kern.iter().zip(&row[j..j + k]).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().unwrap() = out_len;
        self.push(Tensor::new(shape, out), Op::Conv1d(x, w))
    }

    /// Scalar `sum_i w[i] x[i]`.
    pub fn weighted_sum(&mut self, x: Var, w: Vec<f64>) -> Var {
        assert_eq!(w.len(), self.value(x).numel(), "weighted_sum weights");
        let v: f64 = self.data(x).iter().zip(&w).map(|(a, b)| a * b).sum();
        self.push(Tensor::new(vec![1], vec![v]), Op::WeightedSum { x, w })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        self.weighted_sum(x, vec![1.0; n])
    }

    /// Reverse pass from a single-element output.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.value(out).numel(), 1, "backward needs a scalar output");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        for id in (0..=out.0).rev() {
            let node = &self.nodes[id];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            self.backprop(&node.op, &node.value, &dy, &mut grads);
        }
        Gradients { grads }
    }

    fn backprop(&self, op: &Op, y: &Tensor, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(x, w) => {
                let xs = self.value(*x);
                let ws = self.value(*w);
                let (k, m) = (ws.shape()[0], ws.shape()[1]);
                let rows = xs.numel() / k;
                let dx = acc(grads, *x, xs.numel());
                gemm(rows, m, k, dy, (m, 1), ws.data(), (1, m), 1.0, dx, (k, 1));
                let dw = acc(grads, *w, ws.numel());
                gemm(k, rows, m, xs.data(), (1, k), dy, (m, 1), 1.0, dw, (m, 1));
            }
            Op::AddBias(x, b) => {
                let m = self.value(*b).numel();
                add_into(acc(grads, *x, dy.len()), dy);
                let db = acc(grads, *b, m);
                for row in dy.chunks_exact(m) {
                    add_into(db, row);
                }
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, dy.len()), dy);
                add_into(acc(grads, *b, dy.len()), dy);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, *a, dy.len()), dy);
                let db = acc(grads, *b, dy.len());
                db.iter_mut().zip(dy).for_each(|(g, d)| *g -= d);
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                let da = acc(grads, *a, dy.len());
                for i in 0..dy.len() {
                    da[i] += dy[i] * bd[i];
                }
                let db = acc(grads, *b, dy.len());
                for i in 0..dy.len() {
                    db[i] += dy[i] * ad[i];
                }
            }
            Op::Scale(x, c) => {
                let dx = acc(grads, *x, dy.len());
                dx.iter_mut().zip(dy).for_each(|(g, d)| *g += c * d);
            }
            Op::Relu(x) => {
                let dx = acc(grads, *x, dy.len());
                for ((g, d), v) in dx.iter_mut().zip(dy).zip(y.data()) {
                    if *v > 0.0 {
                        *g += d;
                    }
                }
            }
            Op::Tanh(x) => {
                let dx = acc(grads, *x, dy.len());
                for ((g, d), v) in dx.iter_mut().zip(dy).zip(y.data()) {
                    *g += d * (1.0 - v * v);
                }
            }
            Op::Sigmoid(x) => {
                let dx = acc(grads, *x, dy.len());
                for ((g, d), v) in dx.iter_mut().zip(dy).zip(y.data()) {
                    *g += d * v * (1.0 - v);
                }
            }
            Op::Bmm { a, b, trans_b } => {
                let (g, p, k) = dims3(self.shape(*a));
                let q = y.shape()[2];
                let bstr = if *trans_b { (1, k) } else { (q, 1) };
                let (ad, bd) = (self.data(*a), self.data(*b));
                let da = acc(grads, *a, g * p * k);
                for i in 0..g {
                    gemm(
                        p,
                        q,
                        k,
                        &dy[i * p * q..(i + 1) * p * q],
                        (q, 1),
                        &bd[i * k * q..(i + 1) * k * q],
                        (bstr.1, bstr.0),
                        1.0,
                        &mut da[i * p * k..(i + 1) * p * k],
                        (k, 1),
                    );
                }
                let db = acc(grads, *b, g * k * q);
                for i in 0..g {
                    gemm(
                        k,
                        p,
                        q,
                        &ad[i * p * k..(i + 1) * p * k],
                        (1, k),
                        &dy[i * p * q..(i + 1) * p * q],
                        (q, 1),
                        1.0,
                        &mut db[i * k * q..(i + 1) * k * q],
                        bstr,
                    );
                }
            }
            Op::SplitHeads { x, heads } => {
                let (b, n, d) = dims3(self.shape(*x));
                let dk = d / heads;
                let dx = acc(grads, *x, dy.len());
                for bi in 0..b {
                    for i in 0..n {
                        for h in 0..*heads {
                            let s = (bi * n + i) * d + h * dk;
                            let t = ((bi * heads + h) * n + i) * dk;
                            add_into(&mut dx[s..s + dk], &dy[t..t + dk]);
                        }
                    }
                }
            }
            Op::MergeHeads { x, heads } => {
                let (bh, n, dk) = dims3(self.shape(*x));
                let b = bh / heads;
                let d = heads * dk;
                let dx = acc(grads, *x, dy.len());
                for bi in 0..b {
                    for i in 0..n {
                        for h in 0..*heads {
                            let s = ((bi * heads + h) * n + i) * dk;
                            let t = (bi * n + i) * d + h * dk;
                            add_into(&mut dx[s..s + dk], &dy[t..t + dk]);
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let m = y.last_dim();
                let dx = acc(grads, *x, dy.len());
                for ((g, d), s) in dx.chunks_exact_mut(m).zip(dy.chunks_exact(m)).zip(y.data().chunks_exact(m)) {
                    let dot: f64 = d.iter().zip(s).map(|(a, b)| a * b).sum();
                    for j in 0..m {
                        g[j] += s[j] * (d[j] - dot);
                    }
                }
            }
            Op::MaskedLogSoftmax { x, blocked } => {
                let m = y.last_dim();
                let dx = acc(grads, *x, dy.len());
                for (r, (g, d)) in dx.chunks_exact_mut(m).zip(dy.chunks_exact(m)).enumerate() {
                    let mask = &blocked[r * m..(r + 1) * m];
                    let lp = &y.data()[r * m..(r + 1) * m];
                    let total: f64 = d.iter().zip(mask).filter(|(_, &b)| !b).map(|(v, _)| v).sum();
                    for j in 0..m {
                        if !mask[j] {
                            g[j] += d[j] - lp[j].exp() * total;
                        }
                    }
                }
            }
            Op::ConcatLast(parts) => {
                let total = y.last_dim();
                let rows = dy.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    let dp = acc(grads, p, rows * w);
                    for r in 0..rows {
                        add_into(&mut dp[r * w..(r + 1) * w], &dy[r * total + offset..r * total + offset + w]);
                    }
                    offset += w;
                }
            }
            Op::ConcatAxis1(a, b) => {
                let (bs, p, d) = dims3(self.shape(*a));
                let q = self.shape(*b)[1];
                let da = acc(grads, *a, bs * p * d);
                for i in 0..bs {
                    let src = &dy[i * (p + q) * d..];
                    add_into(&mut da[i * p * d..(i + 1) * p * d], &src[..p * d]);
                }
                let db = acc(grads, *b, bs * q * d);
                for i in 0..bs {
                    let src = &dy[(i * (p + q) + p) * d..];
                    add_into(&mut db[i * q * d..(i + 1) * q * d], &src[..q * d]);
                }
            }
            Op::NarrowAxis1 { x, start } => {
                let (bs, n, d) = dims3(self.shape(*x));
                let len = y.shape()[1];
                let dx = acc(grads, *x, bs * n * d);
                for i in 0..bs {
                    add_into(
                        &mut dx[(i * n + start) * d..(i * n + start + len) * d],
                        &dy[i * len * d..(i + 1) * len * d],
                    );
                }
            }
            Op::BroadcastRows { x, n } => {
                let d = self.value(*x).last_dim();
                let b = self.value(*x).numel() / d;
                let dx = acc(grads, *x, b * d);
                for i in 0..b {
                    for j in 0..*n {
                        add_into(&mut dx[i * d..(i + 1) * d], &dy[(i * n + j) * d..(i * n + j + 1) * d]);
                    }
                }
            }
            Op::MeanAxis1(x) => {
                let (b, n, d) = dims3(self.shape(*x));
                let dx = acc(grads, *x, b * n * d);
                let inv = 1.0 / n as f64;
                for i in 0..b {
                    for j in 0..n {
                        for k in 0..d {
                            dx[(i * n + j) * d + k] += dy[i * d + k] * inv;
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = y.last_dim();
                let gd = self.data(*gain);
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                let dx = acc(grads, *x, dy.len());
                let mut dh = vec![0.0; d];
                for (r, dyr) in dy.chunks_exact(d).enumerate() {
                    let h = &xhat[r * d..(r + 1) * d];
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for k in 0..d {
                        dgain[k] += dyr[k] * h[k];
                        dbias[k] += dyr[k];
                        dh[k] = dyr[k] * gd[k];
                        mean_dh += dh[k];
                        mean_dh_h += dh[k] * h[k];
                    }
                    mean_dh /= d as f64;
                    mean_dh_h /= d as f64;
                    for k in 0..d {
                        dx[r * d + k] += rstd[r] * (dh[k] - mean_dh - h[k] * mean_dh_h);
                    }
                }
                add_into(acc(grads, *gain, d), &dgain);
                add_into(acc(grads, *bias, d), &dbias);
            }
            Op::GatherRows { x, idx } => {
                let s = self.shape(*x);
                let (n, d) = if s.len() == 2 { (s[1], 1) } else { (s[1], s[2]) };
                let dx = acc(grads, *x, self.value(*x).numel());
                for (i, &j) in idx.iter().enumerate() {
                    add_into(&mut dx[(i * n + j) * d..(i * n + j + 1) * d], &dy[i * d..(i + 1) * d]);
                }
            }
            Op::Reshape(x) => add_into(acc(grads, *x, dy.len()), dy),
            Op::ScaleRows(x, s) => {
                let m = y.last_dim();
                let (xd, sd) = (self.data(*x), self.data(*s));
                let dx = acc(grads, *x, dy.len());
                for (r, (g, d)) in dx.chunks_exact_mut(m).zip(dy.chunks_exact(m)).enumerate() {
                    for j in 0..m {
                        g[j] += d[j] * sd[r];
                    }
                }
                let ds = acc(grads, *s, sd.len());
                for (r, (xr, d)) in xd.chunks_exact(m).zip(dy.chunks_exact(m)).enumerate() {
                    ds[r] += xr.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            Op::Conv1d(x, w) => {
                let xs = self.value(*x);
                let ws = self.value(*w);
                let len = xs.last_dim();
                let (c, k) = (ws.shape()[0], ws.shape()[1]);
                let out_len = len - k + 1;
                let rows = xs.numel() / len;
                let dx = acc(grads, *x, xs.numel());
                for r in 0..rows {
                    for ch in 0..c {
                        let kern = &ws.data()[ch * k..(ch + 1) * k];
                        for j in 0..out_len {
                            let g = dy[r * out_len + j];
                            for t in 0..k {
                                dx[r * len + j + t] += g * kern[t];
                            }
                        }
                    }
                }
                let dw = acc(grads, *w, ws.numel());
                for r in 0..rows {
                    let row = &xs.data()[r * len..(r + 1) * len];
                    for j in 0..out_len {
                        let g = dy[r * out_len + j];
                        for t in 0..k {
                            let v = g * row[j + t];
                            for ch in 0..c {
                                dw[ch * k + t] += v;
                            }
                        }
                    }
                }
            }
            Op::WeightedSum { x, w } => {
                let dx = acc(grads, *x, w.len());
                for (g, c) in dx.iter_mut().zip(w) {
                    *g += dy[0] * c;
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
}

fn dims3(s: &[usize]) -> (usize, usize, usize) {
    assert_eq!(s.len(), 3, "expected a 3-D tensor, got {s:?}");
    (s[0], s[1], s[2])
}
