//! Vector-level reverse-mode differentiation.
//!
//! A [`Tape`] records primitive operations on dense `f64` vectors. Weights
//! are never copied onto the tape: [`Tape::affine`] reads the matrix straight
//! out of the parameter slice and [`Tape::backward`] accumulates into a flat
//! gradient buffer laid out exactly like the parameters.

use super::params::Slot;

/// Handle to a recorded node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(Slot),
    Affine { w: Slot, b: Option<Slot>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Softplus(Var),
    Exp(Var),
    Ln(Var),
    Square(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Sum(Var),
    Broadcast(Var),
    Clamp(Var, f64, f64),
    Min(Var, Var),
    Max(Var, Var),
    LogSoftmax(Var),
}

#[derive(Clone, Debug)]
struct Node {
    start: usize,
    len: usize,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    params: &'p [f64],
    vals: Vec<f64>,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [f64]) -> Self {
        Self {
            params,
            vals: Vec::with_capacity(1024),
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p [f64] {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        let n = &self.nodes[v.0];
        &self.vals[n.start..n.start + n.len]
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        debug_assert_eq!(n.len, 1, "scalar_value on a vector node");
        self.vals[n.start]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.nodes[v.0].len
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push_with(
        &mut self,
        len: usize,
        op: Op,
        needs_grad: bool,
        fill: impl FnOnce(&mut [f64], &[f64]),
    ) -> Var {
        let start = self.vals.len();
        self.vals.resize(start + len, 0.0);
        let (before, out) = self.vals.split_at_mut(start);
        fill(out, before);
        self.nodes.push(Node {
            start,
            len,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn range(&self, v: Var) -> std::ops::Range<usize> {
        let n = &self.nodes[v.0];
        n.start..n.start + n.len
    }

    /// Constant input; gradients stop here.
    pub fn constant(&mut self, v: &[f64]) -> Var {
        self.push_with(v.len(), Op::Leaf, false, |out, _| out.copy_from_slice(v))
    }

    pub fn scalar(&mut self, c: f64) -> Var {
        self.constant(&[c])
    }

    /// Copies the value of `v` into a new constant (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let r = self.range(v);
        self.push_with(r.len(), Op::Leaf, false, |out, before| {
            out.copy_from_slice(&before[r])
        })
    }

    /// A parameter vector (or matrix, flattened) as a differentiable node.
    pub fn param(&mut self, s: Slot) -> Var {
        let p = &self.params[s.range()];
        self.push_with(s.len(), Op::Param(s), true, |out, _| out.copy_from_slice(p))
    }

    /// `W x + b` with `W` a `rows x cols` slot.
    pub fn affine(&mut self, w: Slot, b: Option<Slot>, x: Var) -> Var {
        assert_eq!(
            self.dim(x),
            w.cols,
            "affine: input length vs weight columns"
        );
        if let Some(b) = b {
            assert_eq!(b.len(), w.rows, "affine: bias length vs weight rows");
        }
        let xr = self.range(x);
        let params = self.params;
        let wm = &params[w.range()];
        self.push_with(w.rows, Op::Affine { w, b, x }, true, |out, before| {
            let xv = &before[xr];
            for (i, o) in out.iter_mut().enumerate() {
                let row = &wm[i * w.cols..(i + 1) * w.cols];
                *o = dot(row, xv);
            }
            if let Some(b) = b {
                for (o, bv) in out.iter_mut().zip(&params[b.range()]) {
                    *o += bv;
                }
            }
        })
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ra, rb) = (self.range(a), self.range(b));
        assert_eq!(
            ra.len(),
            rb.len(),
            "elementwise op on vectors of different length"
        );
        let ng = self.needs(a) || self.needs(b);
        self.push_with(ra.len(), op, ng, |out, before| {
            for ((o, x), y) in out.iter_mut().zip(&before[ra]).zip(&before[rb]) {
                *o = f(*x, *y);
            }
        })
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let ra = self.range(a);
        let ng = self.needs(a);
        self.push_with(ra.len(), op, ng, |out, before| {
            for (o, x) in out.iter_mut().zip(&before[ra]) {
                *o = f(*x);
            }
        })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn min(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Min(a, b), f64::min)
    }

    pub fn max(&mut self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Max(a, b), f64::max)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| x * c)
    }

    /// `a + c` elementwise.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Shift(a), |x| x + c)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), f64::ln)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, Op::Square(a), |x| x * x)
    }

    /// Elementwise clamp; the gradient is zero where the bound is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let ranges: Vec<_> = parts.iter().map(|&p| self.range(p)).collect();
        let len = ranges.iter().map(|r| r.len()).sum();
        let ng = parts.iter().any(|&p| self.needs(p));
        self.push_with(len, Op::Concat(parts.to_vec()), ng, |out, before| {
            let mut k = 0;
            for r in ranges {
                out[k..k + r.len()].copy_from_slice(&before[r.clone()]);
                k += r.len();
            }
        })
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let ra = self.range(a);
        assert!(start + len <= ra.len(), "slice out of range");
        let ng = self.needs(a);
        let src = ra.start + start..ra.start + start + len;
        self.push_with(len, Op::Slice(a, start), ng, |out, before| {
            out.copy_from_slice(&before[src])
        })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let ra = self.range(a);
        let ng = self.needs(a);
        self.push_with(1, Op::Sum(a), ng, |out, before| {
            out[0] = before[ra].iter().sum()
        })
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.dim(a) as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Repeats a length-1 node `len` times.
    pub fn broadcast(&mut self, a: Var, len: usize) -> Var {
        assert_eq!(self.dim(a), 1, "broadcast expects a scalar");
        let x = self.value(a)[0];
        let ng = self.needs(a);
        self.push_with(len, Op::Broadcast(a), ng, |out, _| out.fill(x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let m = self.mul(a, b);
        self.sum(m)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ra = self.range(a);
        let ng = self.needs(a);
        self.push_with(ra.len(), Op::LogSoftmax(a), ng, |out, before| {
            let x = &before[ra];
            let lse = log_sum_exp(x);
            for (o, v) in out.iter_mut().zip(x) {
                *o = v - lse;
            }
        })
    }

    /// Accumulates `d loss / d params` into `grad` (same layout as params).
    /// `loss` must be a scalar node.
    pub fn backward(&self, loss: Var, grad: &mut [f64]) {
        self.backward_scaled(loss, 1.0, grad)
    }

    /// As [`Tape::backward`] but seeds the output gradient with `seed`.
    pub fn backward_scaled(&self, loss: Var, seed: f64, grad: &mut [f64]) {
        assert_eq!(self.dim(loss), 1, "backward from a non-scalar node");
        assert_eq!(grad.len(), self.params.len(), "gradient buffer length");
        let mut g = vec![0.0; self.vals.len()];
        g[self.nodes[loss.0].start] = seed;
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let out = node.start..node.start + node.len;
            if g[out.clone()].iter().all(|&x| x == 0.0) {
                continue;
            }
            let (lo, hi) = g.split_at_mut(node.start);
            let gy = &hi[..node.len];
            let y = &self.vals[out];
            match &node.op {
                Op::Leaf => {}
                Op::Param(s) => {
                    for (acc, d) in grad[s.range()].iter_mut().zip(gy) {
                        *acc += d;
                    }
                }
                Op::Affine { w, b, x } => {
                    let xr = self.range(*x);
                    let xv = &self.vals[xr.clone()];
                    let wm = &self.params[w.range()];
                    {
                        let gw = &mut grad[w.range()];
                        for (i, &gi) in gy.iter().enumerate() {
                            if gi == 0.0 {
                                continue;
                            }
                            let row = &mut gw[i * w.cols..(i + 1) * w.cols];
                            for (r, xv) in row.iter_mut().zip(xv) {
                                *r += gi * xv;
                            }
                        }
                    }
                    if let Some(b) = b {
                        for (acc, d) in grad[b.range()].iter_mut().zip(gy) {
                            *acc += d;
                        }
                    }
                    if self.needs(*x) {
                        let gx = &mut lo[xr];
                        for (i, &gi) in gy.iter().enumerate() {
                            if gi == 0.0 {
                                continue;
                            }
                            let row = &wm[i * w.cols..(i + 1) * w.cols];
                            for (acc, wv) in gx.iter_mut().zip(row) {
                                *acc += gi * wv;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [a, b] {
                        if self.needs(*v) {
                            acc_into(&mut lo[self.range(*v)], gy, |d, _| d);
                        }
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*a) {
                        acc_into(&mut lo[self.range(*a)], gy, |d, _| d);
                    }
                    if self.needs(*b) {
                        acc_into(&mut lo[self.range(*b)], gy, |d, _| -d);
                    }
                }
                Op::Mul(a, b) => {
                    let (ra, rb) = (self.range(*a), self.range(*b));
                    if self.needs(*a) {
                        let bv = &self.vals[rb.clone()];
                        for ((acc, d), y) in lo[ra.clone()].iter_mut().zip(gy).zip(bv) {
                            *acc += d * y;
                        }
                    }
                    if self.needs(*b) {
                        let av = &self.vals[ra];
                        for ((acc, d), x) in lo[rb].iter_mut().zip(gy).zip(av) {
                            *acc += d * x;
                        }
                    }
                }
                Op::Min(a, b) | Op::Max(a, b) => {
                    let is_min = matches!(node.op, Op::Min(..));
                    let (ra, rb) = (self.range(*a), self.range(*b));
                    for i in 0..node.len {
                        let (x, z) = (self.vals[ra.start + i], self.vals[rb.start + i]);
                        // Ties route the gradient to the first argument.
                        let pick_a = if is_min { x <= z } else { x >= z };
                        let target = if pick_a { (a, ra.start) } else { (b, rb.start) };
                        if self.needs(*target.0) {
                            lo[target.1 + i] += gy[i];
                        }
                    }
                }
                Op::Scale(a, c) => acc_into(&mut lo[self.range(*a)], gy, |d, _| d * c),
                Op::Shift(a) => acc_into(&mut lo[self.range(*a)], gy, |d, _| d),
                Op::Relu(a) => {
                    let ra = self.range(*a);
                    let xs = &self.vals[ra.clone()];
                    for ((acc, d), x) in lo[ra].iter_mut().zip(gy).zip(xs) {
                        if *x > 0.0 {
                            *acc += d;
                        }
                    }
                }
                Op::Tanh(a) => chain(&mut lo[self.range(*a)], gy, y, |y| 1.0 - y * y),
                Op::Sigmoid(a) => chain(&mut lo[self.range(*a)], gy, y, |y| y * (1.0 - y)),
                Op::Exp(a) => chain(&mut lo[self.range(*a)], gy, y, |y| y),
                Op::Softplus(a) => {
                    let ra = self.range(*a);
                    let xs = &self.vals[ra.clone()];
                    for ((acc, d), x) in lo[ra].iter_mut().zip(gy).zip(xs) {
                        *acc += d * sigmoid(*x);
                    }
                }
                Op::Ln(a) => {
                    let ra = self.range(*a);
                    let xs = &self.vals[ra.clone()];
                    for ((acc, d), x) in lo[ra].iter_mut().zip(gy).zip(xs) {
                        *acc += d / x;
                    }
                }
                Op::Square(a) => {
                    let ra = self.range(*a);
                    let xs = &self.vals[ra.clone()];
                    for ((acc, d), x) in lo[ra].iter_mut().zip(gy).zip(xs) {
                        *acc += 2.0 * d * x;
                    }
                }
                Op::Clamp(a, l, h) => {
                    let ra = self.range(*a);
                    let xs = &self.vals[ra.clone()];
                    for ((acc, d), x) in lo[ra].iter_mut().zip(gy).zip(xs) {
                        if *x >= *l && *x <= *h {
                            *acc += d;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut k = 0;
                    for p in parts {
                        let rp = self.range(*p);
                        let n = rp.len();
                        if self.needs(*p) {
                            acc_into(&mut lo[rp], &gy[k..k + n], |d, _| d);
                        }
                        k += n;
                    }
                }
                Op::Slice(a, start) => {
                    let ra = self.range(*a);
                    let dst = ra.start + start..ra.start + start + node.len;
                    acc_into(&mut lo[dst], gy, |d, _| d);
                }
                Op::Sum(a) | Op::Broadcast(a) => {
                    let ra = self.range(*a);
                    if matches!(node.op, Op::Sum(_)) {
                        let d = gy[0];
                        lo[ra].iter_mut().for_each(|acc| *acc += d);
                    } else {
                        lo[ra.start] += gy.iter().sum::<f64>();
                    }
                }
                Op::LogSoftmax(a) => {
                    let ra = self.range(*a);
                    let total: f64 = gy.iter().sum();
                    for ((acc, d), ly) in lo[ra].iter_mut().zip(gy).zip(y) {
                        *acc += d - ly.exp() * total;
                    }
                }
            }
        }
    }
}

fn acc_into(dst: &mut [f64], gy: &[f64], f: impl Fn(f64, usize) -> f64) {
    for (i, (acc, d)) in dst.iter_mut().zip(gy).enumerate() {
        *acc += f(*d, i);
    }
}

fn chain(dst: &mut [f64], gy: &[f64], y: &[f64], dy: impl Fn(f64) -> f64) {
    for ((acc, d), yv) in dst.iter_mut().zip(gy).zip(y) {
        *acc += d * dy(*yv);
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Four independent accumulators let the compiler vectorize.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::params::{Init, ParamsBuilder};

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], i: usize) -> f64 {
        let h = 1e-6;
        let mut p = x.to_vec();
        p[i] += h;
        let up = f(&p);
        p[i] -= 2.0 * h;
        (up - f(&p)) / (2.0 * h)
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let params = vec![1.0, 2.0];
        let mut t = Tape::new(&params);
        let c = t.constant(&[3.0, 4.0]);
        let s = t.sum(c);
        let mut g = vec![0.0; 2];
        t.backward(s, &mut g);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn reused_parameter_accumulates() {
        let mut b = ParamsBuilder::new();
        let s = b.vector("x", 1, Init::Zeros);
        let params = vec![3.0];
        let _ = b;
        let mut t = Tape::new(&params);
        let x1 = t.param(s);
        let x2 = t.param(s);
        let y = t.mul(x1, x2); // x^2
        let z = t.add(y, x1); // x^2 + x
        let mut g = vec![0.0];
        t.backward(z, &mut g);
        assert!((g[0] - 7.0).abs() < 1e-15);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let mut b = ParamsBuilder::new();
        let w = b.matrix("w", 4, 3, Init::Zeros);
        let bias = b.vector("b", 4, Init::Zeros);
        let v = b.vector("v", 4, Init::Zeros);
        let n = b.len();
        let x0: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.731).sin() * 0.8).collect();
        let input = [0.3, -0.7, 1.1];
        let f = |p: &[f64], grad: Option<&mut [f64]>| {
            let mut t = Tape::new(p);
            let x = t.constant(&input);
            let h = t.affine(w, Some(bias), x);
            let pv = t.param(v);
            let a = t.tanh(h);
            let s = t.sigmoid(pv);
            let m = t.mul(a, s);
            let sp = t.softplus(h);
            let r = t.relu(pv);
            let e = t.exp(m);
            let l = t.ln(sp);
            let q = t.square(r);
            let mx = t.max(e, l);
            let mn = t.min(q, sp);
            let c = t.concat(&[mx, mn]);
            let sl = t.slice(c, 2, 5);
            let ls = t.log_softmax(sl);
            let cl = t.clamp(a, -0.5, 0.5);
            let sc = t.scale(cl, 1.7);
            let sh = t.shift(sc, 0.2);
            let d = t.sub(sh, pv);
            let s1 = t.sum(ls);
            let s2 = t.dot(d, a);
            let bc = t.broadcast(s1, 3);
            let s3 = t.mean(bc);
            let tot = t.add(s2, s3);
            let loss = t.neg(tot);
            if let Some(g) = grad {
                t.backward(loss, g);
            }
            t.scalar_value(loss)
        };
        let mut g = vec![0.0; n];
        f(&x0, Some(&mut g));
        for i in 0..n {
            let num = fd(|p| f(p, None), &x0, i);
            assert!(
                (num - g[i]).abs() < 1e-7 * (1.0 + num.abs()),
                "coord {i}: fd {num} vs {}",
                g[i]
            );
        }
    }
}
