//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Calling
//! [`Tape::backward`] walks the record in reverse and returns the gradient of
//! a scalar node with respect to every node, from which parameter gradients
//! are collected.

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// How the right operand of a binary op is laid out relative to the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    /// `C×1×1`
    Channel,
    /// `1×H×W`
    Spatial,
    /// `1×1×1`
    Scalar,
}

#[derive(Debug, Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    Conv { x: Var, w: Var, b: Var, k: usize },
    Binary { op: Binary, a: Var, b: Var, bc: Bcast },
    Affine { x: Var, scale: T },
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu { x: Var, slope: T },
    Exp(Var),
    Clamp { x: Var, lo: T, hi: T },
    Concat(Vec<Var>),
    Slice { x: Var, c0: usize },
    AvgPool2(Var),
    Upsample2(Var),
    GlobalAvg(Var),
    PadEdge(Var),
    Crop(Var),
    MeanSquare(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Record of one forward pass.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn bcast_of(a: (usize, usize, usize), b: (usize, usize, usize)) -> Bcast {
    if a == b {
        Bcast::Same
    } else if b == (a.0, 1, 1) {
        Bcast::Channel
    } else if b == (1, a.1, a.2) {
        Bcast::Spatial
    } else if b == (1, 1, 1) {
        Bcast::Scalar
    } else {
        panic!("incompatible broadcast {a:?} vs {b:?}")
    }
}

#[inline]
fn bidx(bc: Bcast, i: usize, hw: usize) -> usize {
    match bc {
        Bcast::Same => i,
        Bcast::Channel => i / hw,
        Bcast::Spatial => i % hw,
        Bcast::Scalar => 0,
    }
}

#[inline]
fn sigmoid<T: Scalar>(v: T) -> T {
    T::one() / (T::one() + (-v).exp())
}

/// Valid output range for a kernel offset `d` over an axis of length `n`.
#[inline]
fn span(d: isize, n: usize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as isize - d.max(0)).max(0) as usize;
    (lo.min(n), hi)
}

fn conv_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>, k: usize) -> Tensor<T> {
    let (cin, h, wd) = x.shape();
    let cout = w.c;
    assert_eq!(w.h, cin, "conv input channels");
    let hw = h * wd;
    let p = (k / 2) as isize;
    let mut out = Tensor::zeros(cout, h, wd);
    for o in 0..cout {
        let oplane = &mut out.data[o * hw..(o + 1) * hw];
        oplane.iter_mut().for_each(|v| *v = b.data[o]);
        for i in 0..cin {
            let iplane = x.plane(i);
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = span(dy, h);
                for kx in 0..k {
                    let dx = kx as isize - p;
                    let (x0, x1) = span(dx, wd);
                    let wv = w.data[(o * cin + i) * k * k + ky * k + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    for y in y0..y1 {
                        let src = ((y as isize + dy) as usize) * wd;
                        let orow = &mut oplane[y * wd + x0..y * wd + x1];
                        let irow = &iplane
                            [(src as isize + x0 as isize + dx) as usize..(src as isize + x1 as isize + dx) as usize];
                        for (ov, &iv) in orow.iter_mut().zip(irow) {
                            *ov += wv * iv;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Returns `(d_input, d_weight, d_bias)`.
fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    k: usize,
    g: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (cin, h, wd) = x.shape();
    let cout = w.c;
    let hw = h * wd;
    let p = (k / 2) as isize;
    let mut dx = Tensor::zeros(cin, h, wd);
    let mut dw = Tensor::zeros(w.c, w.h, w.w);
    let mut db = Tensor::zeros(cout, 1, 1);
    for o in 0..cout {
        let gplane = g.plane(o);
        db.data[o] = gplane.iter().copied().sum();
        for i in 0..cin {
            let iplane = x.plane(i);
            for ky in 0..k {
                let dy = ky as isize - p;
                let (y0, y1) = span(dy, h);
                for kx in 0..k {
                    let ddx = kx as isize - p;
                    let (x0, x1) = span(ddx, wd);
                    let widx = (o * cin + i) * k * k + ky * k + kx;
                    let wv = w.data[widx];
                    let mut acc = T::zero();
                    for y in y0..y1 {
                        let src = (((y as isize + dy) as usize) * wd) as isize;
                        let grow = &gplane[y * wd + x0..y * wd + x1];
                        let a = (src + x0 as isize + ddx) as usize;
                        let bnd = (src + x1 as isize + ddx) as usize;
                        let irow = &iplane[a..bnd];
                        for (&gv, &iv) in grow.iter().zip(irow) {
                            acc += gv * iv;
                        }
                        let drow = &mut dx.data[i * hw + a..i * hw + bnd];
                        for (dv, &gv) in drow.iter_mut().zip(grow) {
                            *dv += wv * gv;
                        }
                    }
                    dw.data[widx] += acc;
                }
            }
        }
    }
    (dx, dw, db)
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; receives a gradient but feeds no parameter.
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    /// Same-size 2-D convolution (zero padding, stride 1, odd kernel `k`).
    pub fn conv(&mut self, x: Var, w: Var, b: Var, k: usize) -> Var {
        let out = conv_forward(self.value(x), self.value(w), self.value(b), k);
        self.push(out, Op::Conv { x, w, b, k })
    }

    fn binary(&mut self, op: Binary, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        let bc = bcast_of(va.shape(), vb.shape());
        let hw = va.h * va.w;
        let data = va
            .data
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = vb.data[bidx(bc, i, hw)];
                match op {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        let out = Tensor::from_vec(va.c, va.h, va.w, data);
        self.push(out, Op::Binary { op, a, b, bc })
    }

    /// `a + b`; `b` may broadcast over channels, space or everything.
    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(Binary::Mul, a, b)
    }

    /// `scale·x + shift`.
    pub fn affine(&mut self, x: Var, scale: T, shift: T) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        self.push(out, Op::Affine { x, scale })
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        self.push(out, Op::Tanh(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { slope * v });
        self.push(out, Op::LeakyRelu { x, slope })
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.exp());
        self.push(out, Op::Exp(x))
    }

    /// Hard clamp; the gradient is passed only where the input was inside.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp { x, lo, hi })
    }

    /// Channel concatenation of same-sized tensors.
    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let (h, w) = (self.value(xs[0]).h, self.value(xs[0]).w);
        let mut data = Vec::new();
        let mut c = 0;
        for &x in xs {
            let v = self.value(x);
            assert_eq!((v.h, v.w), (h, w), "concat spatial size");
            data.extend_from_slice(&v.data);
            c += v.c;
        }
        let out = Tensor::from_vec(c, h, w, data);
        self.push(out, Op::Concat(xs.to_vec()))
    }

    /// Channels `c0..c1`.
    pub fn slice(&mut self, x: Var, c0: usize, c1: usize) -> Var {
        let v = self.value(x);
        let hw = v.h * v.w;
        let out = Tensor::from_vec(c1 - c0, v.h, v.w, v.data[c0 * hw..c1 * hw].to_vec());
        self.push(out, Op::Slice { x, c0 })
    }

    /// 2×2 average pooling, stride 2; spatial sizes must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let v = self.value(x);
        assert!(v.h.is_multiple_of(2) && v.w.is_multiple_of(2), "avg_pool2 needs even size, got {}x{}", v.h, v.w);
        let (oh, ow) = (v.h / 2, v.w / 2);
        let quarter = T::lit(0.25);
        let mut out = Tensor::zeros(v.c, oh, ow);
        for c in 0..v.c {
            let src = v.plane(c);
            for y in 0..oh {
                for x in 0..ow {
                    let (a, b) = (2 * y * v.w + 2 * x, (2 * y + 1) * v.w + 2 * x);
                    out.data[(c * oh + y) * ow + x] = (src[a] + src[a + 1] + src[b] + src[b + 1]) * quarter;
                }
            }
        }
        self.push(out, Op::AvgPool2(x))
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let (oh, ow) = (v.h * 2, v.w * 2);
        let mut out = Tensor::zeros(v.c, oh, ow);
        for c in 0..v.c {
            for y in 0..oh {
                for xx in 0..ow {
                    out.data[(c * oh + y) * ow + xx] = v.data[(c * v.h + y / 2) * v.w + xx / 2];
                }
            }
        }
        self.push(out, Op::Upsample2(x))
    }

    /// Per-channel spatial mean, giving `C×1×1`.
    pub fn global_avg(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = T::from_usize_lossy(v.h * v.w);
        let data = (0..v.c).map(|c| v.plane(c).iter().copied().sum::<T>() / n).collect();
        let out = Tensor::from_vec(v.c, 1, 1, data);
        self.push(out, Op::GlobalAvg(x))
    }

    /// Extends to `h×w` by replicating the last row and column.
    pub fn pad_edge(&mut self, x: Var, h: usize, w: usize) -> Var {
        let v = self.value(x);
        assert!(h >= v.h && w >= v.w);
        let mut out = Tensor::zeros(v.c, h, w);
        for c in 0..v.c {
            for y in 0..h {
                for xx in 0..w {
                    out.data[(c * h + y) * w + xx] = v.data[(c * v.h + y.min(v.h - 1)) * v.w + xx.min(v.w - 1)];
                }
            }
        }
        self.push(out, Op::PadEdge(x))
    }

    /// Top-left `h×w` window.
    pub fn crop(&mut self, x: Var, h: usize, w: usize) -> Var {
        let v = self.value(x);
        assert!(h <= v.h && w <= v.w);
        let mut out = Tensor::zeros(v.c, h, w);
        for c in 0..v.c {
            for y in 0..h {
                let src = (c * v.h + y) * v.w;
                out.data[(c * h + y) * w..(c * h + y + 1) * w].copy_from_slice(&v.data[src..src + w]);
            }
        }
        self.push(out, Op::Crop(x))
    }

    /// Mean of squared elements, as a `1×1×1` tensor.
    pub fn mean_square(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let n = T::from_usize_lossy(v.len());
        let s = v.data.iter().map(|&e| e * e).sum::<T>() / n;
        self.push(Tensor::scalar(s), Op::MeanSquare(x))
    }

    /// Gradients of the scalar node `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let mut acc = |v: Var, t: Tensor<T>| match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            };
            match &node.op {
                Op::Leaf | Op::Param(_) => {}
                Op::Conv { x, w, b, k } => {
                    let (dx, dw, db) = conv_backward(self.value(*x), self.value(*w), *k, &g);
                    acc(*x, dx);
                    acc(*w, dw);
                    acc(*b, db);
                }
                Op::Binary { op, a, b, bc } => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    let hw = va.h * va.w;
                    let mut gb = Tensor::zeros(vb.c, vb.h, vb.w);
                    let ga = match op {
                        Binary::Add | Binary::Sub => {
                            let sign = if matches!(op, Binary::Sub) { -T::one() } else { T::one() };
                            for (i, &gv) in g.data.iter().enumerate() {
                                gb.data[bidx(*bc, i, hw)] += sign * gv;
                            }
                            g.clone()
                        }
                        Binary::Mul => {
                            let mut ga = Tensor::zeros(va.c, va.h, va.w);
                            for (i, &gv) in g.data.iter().enumerate() {
                                let j = bidx(*bc, i, hw);
                                ga.data[i] = gv * vb.data[j];
                                gb.data[j] += gv * va.data[i];
                            }
                            ga
                        }
                    };
                    acc(*a, ga);
                    acc(*b, gb);
                }
                Op::Affine { x, scale } => acc(*x, g.map(|v| v * *scale)),
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let d = g.data.iter().zip(&y.data).map(|(&gv, &s)| gv * s * (T::one() - s)).collect();
                    acc(*x, Tensor::from_vec(g.c, g.h, g.w, d));
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let d = g.data.iter().zip(&y.data).map(|(&gv, &t)| gv * (T::one() - t * t)).collect();
                    acc(*x, Tensor::from_vec(g.c, g.h, g.w, d));
                }
                Op::LeakyRelu { x, slope } => {
                    let vx = self.value(*x);
                    let d = g
                        .data
                        .iter()
                        .zip(&vx.data)
                        .map(|(&gv, &xv)| if xv > T::zero() { gv } else { gv * *slope })
                        .collect();
                    acc(*x, Tensor::from_vec(g.c, g.h, g.w, d));
                }
                Op::Exp(x) => {
                    let d = g.data.iter().zip(&node.value.data).map(|(&gv, &e)| gv * e).collect();
                    acc(*x, Tensor::from_vec(g.c, g.h, g.w, d));
                }
                Op::Clamp { x, lo, hi } => {
                    let vx = self.value(*x);
                    let d = g
                        .data
                        .iter()
                        .zip(&vx.data)
                        .map(|(&gv, &xv)| if xv >= *lo && xv <= *hi { gv } else { T::zero() })
                        .collect();
                    acc(*x, Tensor::from_vec(g.c, g.h, g.w, d));
                }
                Op::Concat(xs) => {
                    let hw = g.h * g.w;
                    let mut c0 = 0;
                    for &x in xs {
                        let c = self.value(x).c;
                        acc(x, Tensor::from_vec(c, g.h, g.w, g.data[c0 * hw..(c0 + c) * hw].to_vec()));
                        c0 += c;
                    }
                }
                Op::Slice { x, c0 } => {
                    let vx = self.value(*x);
                    let hw = vx.h * vx.w;
                    let mut d = Tensor::zeros(vx.c, vx.h, vx.w);
                    d.data[c0 * hw..c0 * hw + g.len()].copy_from_slice(&g.data);
                    acc(*x, d);
                }
                Op::AvgPool2(x) => {
                    let vx = self.value(*x);
                    let mut d = Tensor::zeros(vx.c, vx.h, vx.w);
                    let quarter = T::lit(0.25);
                    for c in 0..vx.c {
                        for y in 0..vx.h {
                            for xx in 0..vx.w {
                                d.data[(c * vx.h + y) * vx.w + xx] = g.data[(c * g.h + y / 2) * g.w + xx / 2] * quarter;
                            }
                        }
                    }
                    acc(*x, d);
                }
                Op::Upsample2(x) => {
                    let vx = self.value(*x);
                    let mut d = Tensor::zeros(vx.c, vx.h, vx.w);
                    for c in 0..g.c {
                        for y in 0..g.h {
                            for xx in 0..g.w {
                                d.data[(c * vx.h + y / 2) * vx.w + xx / 2] += g.data[(c * g.h + y) * g.w + xx];
                            }
                        }
                    }
                    acc(*x, d);
                }
                Op::GlobalAvg(x) => {
                    let vx = self.value(*x);
                    let hw = vx.h * vx.w;
                    let n = T::from_usize_lossy(hw);
                    let d = (0..vx.len()).map(|i| g.data[i / hw] / n).collect();
                    acc(*x, Tensor::from_vec(vx.c, vx.h, vx.w, d));
                }
                Op::PadEdge(x) => {
                    let vx = self.value(*x);
                    let mut d = Tensor::zeros(vx.c, vx.h, vx.w);
                    for c in 0..g.c {
                        for y in 0..g.h {
                            for xx in 0..g.w {
                                d.data[(c * vx.h + y.min(vx.h - 1)) * vx.w + xx.min(vx.w - 1)] +=
                                    g.data[(c * g.h + y) * g.w + xx];
                            }
                        }
                    }
                    acc(*x, d);
                }
                Op::Crop(x) => {
                    let vx = self.value(*x);
                    let mut d = Tensor::zeros(vx.c, vx.h, vx.w);
                    for c in 0..g.c {
                        for y in 0..g.h {
                            let dst = (c * vx.h + y) * vx.w;
                            d.data[dst..dst + g.w]
                                .copy_from_slice(&g.data[(c * g.h + y) * g.w..(c * g.h + y + 1) * g.w]);
                        }
                    }
                    acc(*x, d);
                }
                Op::MeanSquare(x) => {
                    let vx = self.value(*x);
                    let k = T::lit(2.0) * g.data[0] / T::from_usize_lossy(vx.len());
                    acc(*x, vx.map(|v| k * v));
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    /// Sums the gradients that reached each parameter node into one tensor
    /// per parameter of `store` (zeros for parameters not on this tape).
    pub fn param_grads(&self, grads: &Gradients<T>, store: &ParamStore<T>) -> Vec<Tensor<T>> {
        let mut out: Vec<Tensor<T>> = store.iter().map(|(_, t)| Tensor::zeros(t.c, t.h, t.w)).collect();
        for (node, g) in self.nodes.iter().zip(&grads.grads) {
            if let (Op::Param(id), Some(g)) = (&node.op, g) {
                out[id.index()].add_assign(g);
            }
        }
        out
    }
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(c, h, w, (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Checks `d f / d input` against central differences, where `f` builds
    /// a scalar from a single leaf input.
    fn check_grad(input: Tensor<f64>, f: impl Fn(&mut Tape<f64>, Var) -> Var) {
        let mut tape = Tape::new();
        let x = tape.leaf(input.clone());
        let y = f(&mut tape, x);
        let grads = tape.backward(y);
        let analytic = grads.get(x).cloned().unwrap_or_else(|| Tensor::zeros(input.c, input.h, input.w));
        let eval = |t: Tensor<f64>| {
            let mut tape = Tape::new();
            let x = tape.leaf(t);
            let y = f(&mut tape, x);
            tape.value(y).data[0]
        };
        let h = 1e-6;
        for i in 0..input.len() {
            let mut plus = input.clone();
            plus.data[i] += h;
            let mut minus = input.clone();
            minus.data[i] -= h;
            let numeric = (eval(plus) - eval(minus)) / (2.0 * h);
            let err = (numeric - analytic.data[i]).abs();
            assert!(
                err <= 1e-6 * (1.0 + numeric.abs()),
                "element {i}: numeric {numeric} analytic {}",
                analytic.data[i]
            );
        }
    }

    /// Reduces any tensor to a scalar with a fixed random projection so
    /// every output element contributes.
    fn project(tape: &mut Tape<f64>, v: Var, seed: u64) -> Var {
        let t = tape.value(v).clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rand_tensor(&mut rng, t.c, t.h, t.w);
        let pv = tape.leaf(p);
        let m = tape.mul(v, pv);
        let s = tape.affine(m, 1.0, 0.3);
        tape.mean_square(s)
    }

    #[test]
    fn conv_gradient_wrt_input_weight_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = rand_tensor(&mut rng, 3, 2, 9);
        let b = rand_tensor(&mut rng, 3, 1, 1);
        let x = rand_tensor(&mut rng, 2, 5, 4);
        let (w2, b2) = (w.clone(), b.clone());
        check_grad(x.clone(), move |t, x| {
            let wv = t.leaf(w2.clone());
            let bv = t.leaf(b2.clone());
            let y = t.conv(x, wv, bv, 3);
            project(t, y, 7)
        });
        let x2 = x.clone();
        let b3 = b.clone();
        check_grad(w, move |t, w| {
            let xv = t.leaf(x2.clone());
            let bv = t.leaf(b3.clone());
            let y = t.conv(xv, w, bv, 3);
            project(t, y, 7)
        });
        check_grad(b, move |t, b| {
            let xv = t.leaf(x.clone());
            let wv = t.leaf(rand_tensor(&mut ChaCha8Rng::seed_from_u64(3), 3, 2, 1));
            let y = t.conv(xv, wv, b, 1);
            project(t, y, 8)
        });
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (cin, cout, h, w) = (2, 2, 4, 5);
        let x = rand_tensor(&mut rng, cin, h, w);
        let wt = rand_tensor(&mut rng, cout, cin, 9);
        let b = rand_tensor(&mut rng, cout, 1, 1);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.leaf(x.clone()), tape.leaf(wt.clone()), tape.leaf(b.clone()));
        let y = tape.conv(xv, wv, bv, 3);
        for o in 0..cout {
            for yy in 0..h {
                for xx in 0..w {
                    let mut s = b.data[o];
                    for i in 0..cin {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (sy, sx) = (yy as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                                    s += wt.data[(o * cin + i) * 9 + ky * 3 + kx]
                                        * x.data[(i * h + sy as usize) * w + sx as usize];
                                }
                            }
                        }
                    }
                    assert!((tape.value(y).data[(o * h + yy) * w + xx] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn elementwise_and_structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = rand_tensor(&mut rng, 2, 4, 6);
        let chan = rand_tensor(&mut rng, 2, 1, 1);
        let spatial = rand_tensor(&mut rng, 1, 4, 6);
        check_grad(x.clone(), |t, x| {
            let s = t.sigmoid(x);
            let th = t.tanh(x);
            let a = t.mul(s, th);
            let l = t.leaky_relu(a, 0.2);
            let e = t.exp(l);
            project(t, e, 1)
        });
        let c2 = chan.clone();
        let s2 = spatial.clone();
        check_grad(x.clone(), move |t, x| {
            let c = t.leaf(c2.clone());
            let s = t.leaf(s2.clone());
            let a = t.mul(x, c);
            let b = t.sub(a, s);
            let d = t.add(b, x);
            let g = t.global_avg(d);
            let m = t.mul(d, g);
            project(t, m, 2)
        });
        check_grad(chan, move |t, c| {
            let xv = t.leaf(x.clone());
            let a = t.mul(xv, c);
            let one = t.leaf(Tensor::scalar(0.7));
            let b = t.mul(a, one);
            project(t, b, 3)
        });
        check_grad(spatial, |t, s| {
            let p = t.avg_pool2(s);
            let u = t.upsample2(p);
            let cat = t.concat(&[u, s]);
            let sl = t.slice(cat, 1, 2);
            let pad = t.pad_edge(sl, 6, 7);
            let cr = t.crop(pad, 5, 6);
            let cl = t.clamp(cr, -0.5, 0.5);
            project(t, cl, 4)
        });
    }
}
