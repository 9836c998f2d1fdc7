//! Define-by-run tape. Every op appends a node holding its output value;
//! [`Graph::backward`] walks the tape in reverse and accumulates gradients.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Bmm { a: usize, b: usize, batch: usize, m: usize, k: usize, n: usize, tb: bool },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, s: f64 },
    Tanh { a: usize },
    Sigmoid { a: usize },
    Relu { a: usize },
    Map { a: usize, df: fn(f64) -> f64 },
    Softmax { a: usize, n: usize },
    Conv1d { x: usize, w: usize, bias: usize, b: usize, l: usize, cin: usize, k: usize, cout: usize },
    Concat { parts: Vec<usize>, outer: usize, inners: Vec<usize> },
    Slice { a: usize, outer: usize, in_inner: usize, start: usize, len: usize },
    Reshape { a: usize },
    MeanAxis { a: usize, outer: usize, axis: usize, inner: usize },
    Sum { a: usize },
    Mean { a: usize },
    Mse { p: usize, t: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
    trainable: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`; `None` if `v` does not require gradients.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn suffix_broadcasts(a: &[usize], b: &[usize]) -> bool {
    b.len() <= a.len() && a[a.len() - b.len()..] == *b
}

/// Splits `shape` around `axis` into (outer, axis_len, inner).
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: true,
            trainable: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf (no gradient).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            needs_grad: false,
            trainable: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// `[..., K] · [K, N] -> [..., N]` with leading dims flattened.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sb.len() != 2 || sa.is_empty() || sa[sa.len() - 1] != sb[0] {
            return Err(Error::shape("matmul", &sa, &sb));
        }
        let k = sb[0];
        let n = sb[1];
        let m = self.nodes[a.0].value.numel() / k.max(1);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), (k, 1), self.data(b), (n, 1), 0.0, &mut out, (n, 1));
        let mut shape = sa.clone();
        *shape.last_mut().expect("nonempty") = n;
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::MatMul { a: a.0, b: b.0, m, k, n }, &[a.0, b.0]))
    }

    /// Batched `[Bt, M, K] · [Bt, K, N]`, or `· [Bt, N, K]ᵀ` when `transpose_b`.
    pub fn bmm(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shape("bmm", &sa, &sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if transpose_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if kb != k {
            return Err(Error::shape("bmm", &sa, &sb));
        }
        let bs = if transpose_b { (1, k) } else { (n, 1) };
        let mut out = vec![0.0; batch * m * n];
        let (da, db) = (self.data(a), self.data(b));
        for i in 0..batch {
            gemm(
                m,
                k,
                n,
                &da[i * m * k..(i + 1) * m * k],
                (k, 1),
                &db[i * k * n..(i + 1) * k * n],
                bs,
                0.0,
                &mut out[i * m * n..(i + 1) * m * n],
                (n, 1),
            );
        }
        let t = Tensor::new(&[batch, m, n], out)?;
        Ok(self.push(
            t,
            Op::Bmm {
                a: a.0,
                b: b.0,
                batch,
                m,
                k,
                n,
                tb: transpose_b,
            },
            &[a.0, b.0],
        ))
    }

    fn broadcast_binary(&mut self, a: Var, b: Var, name: &'static str, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !suffix_broadcasts(sa, sb) {
            return Err(Error::shape(name, sa, sb));
        }
        let db = self.data(b);
        let mut out = Vec::with_capacity(self.data(a).len());
        for chunk in self.data(a).chunks(db.len()) {
            out.extend(chunk.iter().zip(db).map(|(x, y)| f(*x, *y)));
        }
        Tensor::new(sa, out)
    }

    /// Elementwise sum; `b`'s shape must equal a suffix of `a`'s.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.broadcast_binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    /// Elementwise product with the same broadcasting rule as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.broadcast_binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = &self.nodes[a.0].value;
        let t = Tensor::new(v.shape(), v.data().iter().map(|x| x * s).collect()).expect("same shape");
        self.push(t, Op::Scale { a: a.0, s }, &[a.0])
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let v = &self.nodes[a.0].value;
        let t = Tensor::new(v.shape(), v.data().iter().map(|x| f(*x)).collect()).expect("same shape");
        self.push(t, op, &[a.0])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh { a: a.0 })
    }

    /// `σ(x) = (1 + tanh(x/2)) / 2`, stable for large |x|.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, |x| 0.5 * (1.0 + (0.5 * x).tanh()), Op::Sigmoid { a: a.0 })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu { a: a.0 })
    }

    /// Custom elementwise op with derivative `df` evaluated at the input.
    pub fn map(&mut self, a: Var, f: fn(f64) -> f64, df: fn(f64) -> f64) -> Var {
        self.unary(a, f, Op::Map { a: a.0, df })
    }

    /// Softmax over the last axis (row max subtracted).
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let n = *shape.last().ok_or_else(|| Error::shape("softmax", &shape, &[]))?;
        let mut out = self.data(a).to_vec();
        for row in out.chunks_mut(n) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let t = Tensor::new(&shape, out)?;
        Ok(self.push(t, Op::Softmax { a: a.0, n }, &[a.0]))
    }

    /// Valid 1-D convolution: `[B, L, Cin] ⊛ [K, Cin, Cout] + bias[Cout] -> [B, L-K+1, Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Var) -> Result<Var> {
        let (sx, sw, sbias) = (self.shape(x).to_vec(), self.shape(w).to_vec(), self.shape(bias).to_vec());
        if sx.len() != 3 || sw.len() != 3 || sx[2] != sw[1] || sw[0] > sx[1] || sw[0] == 0 {
            return Err(Error::shape("conv1d", &sx, &sw));
        }
        let (b, l, cin) = (sx[0], sx[1], sx[2]);
        let (k, cout) = (sw[0], sw[2]);
        if sbias != [cout] {
            return Err(Error::shape("conv1d bias", &sw, &sbias));
        }
        let lout = l - k + 1;
        let mut out = vec![0.0; b * lout * cout];
        let bias_d = self.data(bias);
        for row in out.chunks_mut(cout) {
            row.copy_from_slice(bias_d);
        }
        let (dx, dw) = (self.data(x), self.data(w));
        for bi in 0..b {
            let xb = &dx[bi * l * cin..(bi + 1) * l * cin];
            let ob = &mut out[bi * lout * cout..(bi + 1) * lout * cout];
            for ki in 0..k {
                gemm(
                    lout,
                    cin,
                    cout,
                    &xb[ki * cin..],
                    (cin, 1),
                    &dw[ki * cin * cout..(ki + 1) * cin * cout],
                    (cout, 1),
                    1.0,
                    ob,
                    (cout, 1),
                );
            }
        }
        let t = Tensor::new(&[b, lout, cout], out)?;
        Ok(self.push(
            t,
            Op::Conv1d {
                x: x.0,
                w: w.0,
                bias: bias.0,
                b,
                l,
                cin,
                k,
                cout,
            },
            &[x.0, w.0, bias.0],
        ))
    }

    /// Concatenation along `axis`; all other dims must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*parts.first().ok_or_else(|| Error::Argument("concat of nothing".into()))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &first, &[axis]));
        }
        let mut total = 0;
        for p in parts {
            let s = self.shape(*p);
            if s.len() != first.len()
                || s[..axis] != first[..axis]
                || s[axis + 1..] != first[axis + 1..]
            {
                return Err(Error::shape("concat", &first, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = around(&first, axis);
        let inners: Vec<usize> = parts.iter().map(|p| self.shape(*p)[axis] * inner).collect();
        let row: usize = inners.iter().sum();
        let mut out = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (p, w) in parts.iter().zip(&inners) {
                out.extend_from_slice(&self.data(*p)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.clone();
        shape[axis] = total;
        let t = Tensor::new(&shape, out)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(
            t,
            Op::Concat {
                parts: ids.clone(),
                outer,
                inners,
            },
            &ids,
        ))
    }

    /// `a[..., start..start+len, ...]` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::shape("slice", &shape, &[axis, start, len]));
        }
        let (outer, n, inner) = around(&shape, axis);
        let in_inner = n * inner;
        let d = self.data(a);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&d[o * in_inner + start * inner..o * in_inner + (start + len) * inner]);
        }
        let mut s2 = shape.clone();
        s2[axis] = len;
        let t = Tensor::new(&s2, out)?;
        Ok(self.push(
            t,
            Op::Slice {
                a: a.0,
                outer,
                in_inner,
                start: start * inner,
                len: len * inner,
            },
            &[a.0],
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.nodes[a.0].value.clone().reshaped(shape)?;
        Ok(self.push(t, Op::Reshape { a: a.0 }, &[a.0]))
    }

    /// Mean over `axis`, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || shape.len() < 2 {
            return Err(Error::shape("mean_axis", &shape, &[axis]));
        }
        let (outer, n, inner) = around(&shape, axis);
        let d = self.data(a);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let src = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
                out[o * inner..(o + 1) * inner].iter_mut().zip(src).for_each(|(y, x)| *y += x);
            }
        }
        out.iter_mut().for_each(|v| *v /= n as f64);
        let mut s2 = shape.clone();
        s2.remove(axis);
        let t = Tensor::new(&s2, out)?;
        Ok(self.push(
            t,
            Op::MeanAxis {
                a: a.0,
                outer,
                axis: n,
                inner,
            },
            &[a.0],
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum::<f64>();
        self.push(Tensor::scalar(s), Op::Sum { a: a.0 }, &[a.0])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean { a: a.0 }, &[a.0])
    }

    /// Mean squared error between equally sized tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (dp, dt) = (self.data(pred), self.data(target));
        if dp.len() != dt.len() || dp.is_empty() {
            return Err(Error::shape("mse", self.shape(pred), self.shape(target)));
        }
        let s = dp.iter().zip(dt).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / dp.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::Mse { p: pred.0, t: target.0 }, &[pred.0, target.0]))
    }

    /// Reverse pass from a scalar `loss`. Every trainable leaf gets a gradient
    /// (zeros if it does not reach the loss).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(Error::Argument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if n.trainable && grads[i].is_none() {
                grads[i] = Some(vec![0.0; n.value.numel()]);
            }
            if !n.trainable {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], i: usize) -> Option<&'g mut Vec<f64>> {
        if !self.nodes[i].needs_grad {
            return None;
        }
        let n = self.nodes[i].value.numel();
        Some(grads[i].get_or_insert_with(|| vec![0.0; n]))
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |j: usize| self.nodes[j].value.data();
        let y = val(i);
        match self.nodes[i].op.clone() {
            Op::Leaf => {}
            Op::MatMul { a, b, m, k, n } => {
                if let Some(ga) = self.acc(grads, a) {
                    gemm(m, n, k, g, (n, 1), val(b), (1, n), 1.0, ga, (k, 1));
                }
                if let Some(gb) = self.acc(grads, b) {
                    gemm(k, m, n, val(a), (1, k), g, (n, 1), 1.0, gb, (n, 1));
                }
            }
            Op::Bmm { a, b, batch, m, k, n, tb } => {
                let bs = if tb { (1, k) } else { (n, 1) };
                if let Some(ga) = self.acc(grads, a) {
                    for t in 0..batch {
                        gemm(
                            m,
                            n,
                            k,
                            &g[t * m * n..(t + 1) * m * n],
                            (n, 1),
                            &val(b)[t * k * n..(t + 1) * k * n],
                            (bs.1, bs.0),
                            1.0,
                            &mut ga[t * m * k..(t + 1) * m * k],
                            (k, 1),
                        );
                    }
                }
                if let Some(gb) = self.acc(grads, b) {
                    for t in 0..batch {
                        gemm(
                            k,
                            m,
                            n,
                            &val(a)[t * m * k..(t + 1) * m * k],
                            (1, k),
                            &g[t * m * n..(t + 1) * m * n],
                            (n, 1),
                            1.0,
                            &mut gb[t * k * n..(t + 1) * k * n],
                            bs,
                        );
                    }
                }
            }
            Op::Add { a, b } => {
                if let Some(ga) = self.acc(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                }
                if let Some(gb) = self.acc(grads, b) {
                    for chunk in g.chunks(gb.len()) {
                        gb.iter_mut().zip(chunk).for_each(|(x, v)| *x += v);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (va, vb) = (val(a), val(b));
                let nb = vb.len();
                if let Some(ga) = self.acc(grads, a) {
                    for (gac, gc) in ga.chunks_mut(nb).zip(g.chunks(nb)) {
                        gac.iter_mut().zip(gc).zip(vb).for_each(|((x, v), w)| *x += v * w);
                    }
                }
                if let Some(gb) = self.acc(grads, b) {
                    for (gc, vac) in g.chunks(nb).zip(va.chunks(nb)) {
                        gb.iter_mut().zip(gc).zip(vac).for_each(|((x, v), w)| *x += v * w);
                    }
                }
            }
            Op::Scale { a, s } => {
                if let Some(ga) = self.acc(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, v)| *x += v * s);
                }
            }
            Op::Tanh { a } => {
                if let Some(ga) = self.acc(grads, a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * (1.0 - y[j] * y[j]);
                    }
                }
            }
            Op::Sigmoid { a } => {
                if let Some(ga) = self.acc(grads, a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * y[j] * (1.0 - y[j]);
                    }
                }
            }
            Op::Relu { a } => {
                let x = val(a);
                if let Some(ga) = self.acc(grads, a) {
                    for j in 0..g.len() {
                        if x[j] > 0.0 {
                            ga[j] += g[j];
                        }
                    }
                }
            }
            Op::Map { a, df } => {
                let x = val(a);
                if let Some(ga) = self.acc(grads, a) {
                    for j in 0..g.len() {
                        ga[j] += g[j] * df(x[j]);
                    }
                }
            }
            Op::Softmax { a, n } => {
                if let Some(ga) = self.acc(grads, a) {
                    for ((gr, yr), out) in g.chunks(n).zip(y.chunks(n)).zip(ga.chunks_mut(n)) {
                        let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                        for j in 0..n {
                            out[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::Conv1d { x, w, bias, b, l, cin, k, cout } => {
                let lout = l - k + 1;
                if let Some(gx) = self.acc(grads, x) {
                    let dw = val(w);
                    for bi in 0..b {
                        let gb = &g[bi * lout * cout..(bi + 1) * lout * cout];
                        let gxb = &mut gx[bi * l * cin..(bi + 1) * l * cin];
                        for ki in 0..k {
                            gemm(
                                lout,
                                cout,
                                cin,
                                gb,
                                (cout, 1),
                                &dw[ki * cin * cout..(ki + 1) * cin * cout],
                                (1, cout),
                                1.0,
                                &mut gxb[ki * cin..],
                                (cin, 1),
                            );
                        }
                    }
                }
                if let Some(gw) = self.acc(grads, w) {
                    let dx = val(x);
                    for bi in 0..b {
                        let gb = &g[bi * lout * cout..(bi + 1) * lout * cout];
                        let xb = &dx[bi * l * cin..(bi + 1) * l * cin];
                        for ki in 0..k {
                            gemm(
                                cin,
                                lout,
                                cout,
                                &xb[ki * cin..],
                                (1, cin),
                                gb,
                                (cout, 1),
                                1.0,
                                &mut gw[ki * cin * cout..(ki + 1) * cin * cout],
                                (cout, 1),
                            );
                        }
                    }
                }
                if let Some(gbias) = self.acc(grads, bias) {
                    for row in g.chunks(cout) {
                        gbias.iter_mut().zip(row).for_each(|(x, v)| *x += v);
                    }
                }
            }
            Op::Concat { parts, outer, inners } => {
                let row: usize = inners.iter().sum();
                let mut off = 0;
                for (p, w) in parts.iter().zip(&inners) {
                    if let Some(gp) = self.acc(grads, *p) {
                        for o in 0..outer {
                            let src = &g[o * row + off..o * row + off + w];
                            gp[o * w..(o + 1) * w].iter_mut().zip(src).for_each(|(x, v)| *x += v);
                        }
                    }
                    off += w;
                }
            }
            Op::Slice { a, outer, in_inner, start, len } => {
                if let Some(ga) = self.acc(grads, a) {
                    for o in 0..outer {
                        let dst = &mut ga[o * in_inner + start..o * in_inner + start + len];
                        dst.iter_mut().zip(&g[o * len..(o + 1) * len]).for_each(|(x, v)| *x += v);
                    }
                }
            }
            Op::Reshape { a } => {
                if let Some(ga) = self.acc(grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, v)| *x += v);
                }
            }
            Op::MeanAxis { a, outer, axis, inner } => {
                if let Some(ga) = self.acc(grads, a) {
                    let s = 1.0 / axis as f64;
                    for o in 0..outer {
                        let src = &g[o * inner..(o + 1) * inner];
                        for j in 0..axis {
                            let dst = &mut ga[(o * axis + j) * inner..(o * axis + j + 1) * inner];
                            dst.iter_mut().zip(src).for_each(|(x, v)| *x += v * s);
                        }
                    }
                }
            }
            Op::Sum { a } => {
                if let Some(ga) = self.acc(grads, a) {
                    ga.iter_mut().for_each(|x| *x += g[0]);
                }
            }
            Op::Mean { a } => {
                if let Some(ga) = self.acc(grads, a) {
                    let s = g[0] / ga.len() as f64;
                    ga.iter_mut().for_each(|x| *x += s);
                }
            }
            Op::Mse { p, t } => {
                let (vp, vt) = (val(p), val(t));
                let s = 2.0 * g[0] / vp.len() as f64;
                if let Some(gp) = self.acc(grads, p) {
                    for j in 0..vp.len() {
                        gp[j] += s * (vp[j] - vt[j]);
                    }
                }
                if let Some(gt) = self.acc(grads, t) {
                    for j in 0..vp.len() {
                        gt[j] -= s * (vp[j] - vt[j]);
                    }
                }
            }
        }
    }
}
