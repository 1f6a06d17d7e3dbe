//! Tape-based reverse-mode automatic differentiation.
//!
//! Operations append nodes to a [`Graph`]; [`Graph::backward`] walks the tape
//! in reverse and accumulates cotangents. A fresh graph is built for every
//! forward pass.

use std::sync::Arc;

use super::conv::{conv2d_backward, conv2d_forward};
use super::tensor::{Real, Tensor};
use crate::error::{MarError, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// A fixed linear map between two single-channel planes, with its adjoint.
pub trait LinearOp<T>: Send + Sync {
    /// `[height, width]` of the input plane.
    fn in_shape(&self) -> [usize; 2];
    fn out_shape(&self) -> [usize; 2];
    fn apply(&self, x: &[T]) -> Vec<T>;
    fn adjoint(&self, g: &[T]) -> Vec<T>;
}

enum Op<T: Real> {
    Leaf,
    Conv {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    },
    LeakyRelu {
        x: Var,
        slope: T,
    },
    Upsample2 {
        x: Var,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Affine {
        x: Var,
        scale: T,
    },
    Select {
        mask: Vec<bool>,
        a: Var,
        b: Var,
    },
    Pad {
        x: Var,
    },
    Crop {
        x: Var,
    },
    Linear {
        x: Var,
        op: Arc<dyn LinearOp<T>>,
    },
    L1 {
        a: Var,
        diff_sign: Vec<T>,
        weights: Option<Vec<T>>,
        denom: T,
    },
    Sum {
        terms: Vec<(Var, T)>,
    },
    Dot {
        a: Var,
        c: Vec<T>,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Graph::new()
    }
}

fn sign<T: Real>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape
    }

    /// Scalar value of a `1x1x1x1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data[0]
    }

    /// Constant input; no gradient is propagated to it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Result<Var> {
        let out = conv2d_forward(self.value(x), self.value(w), self.value(b), stride, pad)?;
        let rg = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Conv { x, w, b, stride, pad }, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let slope = T::from_f64(slope);
        let v = self.value(x);
        let out = Tensor {
            shape: v.shape,
            data: v
                .data
                .iter()
                .map(|&a| if a >= T::zero() { a } else { slope * a })
                .collect(),
        };
        let rg = self.needs(x);
        self.push(out, Op::LeakyRelu { x, slope }, rg)
    }

    /// Nearest-neighbor upsampling by two in both directions.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let [n, c, h, w] = v.shape;
        let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
        for p in 0..n * c {
            let src = &v.data[p * h * w..(p + 1) * h * w];
            let dst = &mut out.data[p * 4 * h * w..(p + 1) * 4 * h * w];
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    dst[y * 2 * w + xx] = src[(y / 2) * w + xx / 2];
                }
            }
        }
        let rg = self.needs(x);
        self.push(out, Op::Upsample2 { x }, rg)
    }

    /// 2x2 max pooling with stride 2; odd trailing rows/columns are folded
    /// into the last window.
    pub fn max_pool2(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let [n, c, h, w] = v.shape;
        let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
        let mut out = Tensor::zeros([n, c, ho, wo]);
        let mut argmax = vec![0; n * c * ho * wo];
        for p in 0..n * c {
            let base = p * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for y in 2 * oy..(2 * oy + 2).min(h) {
                        for xx in 2 * ox..(2 * ox + 2).min(w) {
                            let i = base + y * w + xx;
                            if v.data[i] > v.data[best] {
                                best = i;
                            }
                        }
                    }
                    let o = (p * ho + oy) * wo + ox;
                    out.data[o] = v.data[best];
                    argmax[o] = best;
                }
            }
        }
        let rg = self.needs(x);
        self.push(out, Op::MaxPool2 { x, argmax }, rg)
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let [n, ca, h, w] = va.shape;
        let [nb, cb, hb, wb] = vb.shape;
        if n != nb || h != hb || w != wb {
            return Err(MarError::shape(&[n, cb, h, w], &vb.shape));
        }
        let mut data = Vec::with_capacity(va.len() + vb.len());
        for item in 0..n {
            data.extend_from_slice(&va.data[item * ca * h * w..(item + 1) * ca * h * w]);
            data.extend_from_slice(&vb.data[item * cb * h * w..(item + 1) * cb * h * w]);
        }
        let out = Tensor {
            shape: [n, ca + cb, h, w],
            data,
        };
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat { a, b }, rg))
    }

    fn same_shape(&self, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(MarError::shape(&self.shape(a), &self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = Tensor {
            shape: self.shape(a),
            data: self
                .value(a)
                .data
                .iter()
                .zip(&self.value(b).data)
                .map(|(&x, &y)| x + y)
                .collect(),
        };
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        let out = Tensor {
            shape: self.shape(a),
            data: self
                .value(a)
                .data
                .iter()
                .zip(&self.value(b).data)
                .map(|(&x, &y)| x - y)
                .collect(),
        };
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Sub { a, b }, rg))
    }

    /// `scale * x + offset`, with `offset` a constant of the same shape (or
    /// absent).
    pub fn affine(&mut self, x: Var, scale: f64, offset: Option<&Tensor<T>>) -> Result<Var> {
        let s = T::from_f64(scale);
        let v = self.value(x);
        let mut data: Vec<T> = v.data.iter().map(|&a| s * a).collect();
        if let Some(off) = offset {
            if off.shape != v.shape {
                return Err(MarError::shape(&v.shape, &off.shape));
            }
            for (d, &o) in data.iter_mut().zip(&off.data) {
                *d += o;
            }
        }
        let out = Tensor { shape: v.shape, data };
        let rg = self.needs(x);
        Ok(self.push(out, Op::Affine { x, scale: s }, rg))
    }

    /// Elementwise `mask ? a : b`; values are copied, never blended.
    pub fn select(&mut self, mask: &[bool], a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b)?;
        if mask.len() != self.value(a).len() {
            return Err(MarError::shape(&[self.value(a).len()], &[mask.len()]));
        }
        let out = Tensor {
            shape: self.shape(a),
            data: mask
                .iter()
                .zip(self.value(a).data.iter().zip(&self.value(b).data))
                .map(|(&m, (&x, &y))| if m { x } else { y })
                .collect(),
        };
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            out,
            Op::Select {
                mask: mask.to_vec(),
                a,
                b,
            },
            rg,
        ))
    }

    /// Zero-pad at the bottom and right to `h x w`.
    pub fn pad_to(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let v = self.value(x);
        let [n, c, hi, wi] = v.shape;
        if h < hi || w < wi {
            return Err(MarError::shape(&[n, c, h, w], &v.shape));
        }
        let mut out = Tensor::zeros([n, c, h, w]);
        for p in 0..n * c {
            for y in 0..hi {
                let src = &v.data[(p * hi + y) * wi..(p * hi + y + 1) * wi];
                out.data[(p * h + y) * w..(p * h + y) * w + wi].copy_from_slice(src);
            }
        }
        let rg = self.needs(x);
        Ok(self.push(out, Op::Pad { x }, rg))
    }

    /// Keep the top-left `h x w` window.
    pub fn crop_to(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let v = self.value(x);
        let [n, c, hi, wi] = v.shape;
        if h > hi || w > wi {
            return Err(MarError::shape(&[n, c, h, w], &v.shape));
        }
        let mut out = Tensor::zeros([n, c, h, w]);
        for p in 0..n * c {
            for y in 0..h {
                let src = &v.data[(p * hi + y) * wi..(p * hi + y) * wi + w];
                out.data[(p * h + y) * w..(p * h + y + 1) * w].copy_from_slice(src);
            }
        }
        let rg = self.needs(x);
        Ok(self.push(out, Op::Crop { x }, rg))
    }

    /// Apply a fixed linear operator to every single-channel item.
    pub fn linear(&mut self, x: Var, op: Arc<dyn LinearOp<T>>) -> Result<Var> {
        let v = self.value(x);
        let [n, c, h, w] = v.shape;
        if c != 1 || [h, w] != op.in_shape() {
            return Err(MarError::shape(&[n, 1, op.in_shape()[0], op.in_shape()[1]], &v.shape));
        }
        let [ho, wo] = op.out_shape();
        let mut data = Vec::with_capacity(n * ho * wo);
        for item in 0..n {
            data.extend(op.apply(&v.data[item * h * w..(item + 1) * h * w]));
        }
        let out = Tensor {
            shape: [n, 1, ho, wo],
            data,
        };
        let rg = self.needs(x);
        Ok(self.push(out, Op::Linear { x, op }, rg))
    }

    /// Mean absolute difference to a constant target. With `weights`, the
    /// mean is taken over the weighted elements: `sum w |a - t| / sum w`.
    pub fn l1_mean(&mut self, a: Var, target: &Tensor<T>, weights: Option<&[T]>) -> Result<Var> {
        let v = self.value(a);
        if v.shape != target.shape {
            return Err(MarError::shape(&v.shape, &target.shape));
        }
        let diff_sign: Vec<T> = v.data.iter().zip(&target.data).map(|(&x, &t)| sign(x - t)).collect();
        let (total, denom) = match weights {
            Some(w) => {
                if w.len() != v.len() {
                    return Err(MarError::shape(&[v.len()], &[w.len()]));
                }
                let mut total = T::zero();
                let mut denom = T::zero();
                for ((&x, &t), &wt) in v.data.iter().zip(&target.data).zip(w) {
                    total += wt * (x - t).abs();
                    denom += wt;
                }
                (total, denom)
            }
            None => {
                let mut total = T::zero();
                for (&x, &t) in v.data.iter().zip(&target.data) {
                    total += (x - t).abs();
                }
                (total, T::from_f64(v.len() as f64))
            }
        };
        if !(denom > T::zero()) {
            return Err(MarError::Data("loss has no elements to average".into()));
        }
        let out = Tensor::filled([1, 1, 1, 1], total / denom);
        let rg = self.needs(a);
        Ok(self.push(
            out,
            Op::L1 {
                a,
                diff_sign,
                weights: weights.map(|w| w.to_vec()),
                denom,
            },
            rg,
        ))
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var> {
        let mut total = T::zero();
        let mut typed = Vec::with_capacity(terms.len());
        for &(v, w) in terms {
            if self.value(v).len() != 1 {
                return Err(MarError::shape(&[1], &[self.value(v).len()]));
            }
            let w = T::from_f64(w);
            total += w * self.scalar(v);
            typed.push((v, w));
        }
        let rg = typed.iter().any(|&(v, _)| self.needs(v));
        Ok(self.push(Tensor::filled([1, 1, 1, 1], total), Op::Sum { terms: typed }, rg))
    }

    /// Inner product with a constant tensor of the same shape.
    pub fn dot(&mut self, a: Var, c: &Tensor<T>) -> Result<Var> {
        let v = self.value(a);
        if v.shape != c.shape {
            return Err(MarError::shape(&v.shape, &c.shape));
        }
        let mut total = T::zero();
        for (&x, &y) in v.data.iter().zip(&c.data) {
            total += x * y;
        }
        let rg = self.needs(a);
        Ok(self.push(
            Tensor::filled([1, 1, 1, 1], total),
            Op::Dot { a, c: c.data.clone() },
            rg,
        ))
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(MarError::shape(&[1], &[self.value(loss).len()]));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Tensor::filled([1, 1, 1, 1], T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &Tensor<T>) -> Result<()> {
        // split borrow: the op is read while parents' grads are written
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        let result = self.propagate_op(&op, g);
        self.nodes[i].op = op;
        result
    }

    fn propagate_op(&mut self, op: &Op<T>, g: &Tensor<T>) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Conv { x, w, b, stride, pad } => {
                let need_dx = self.needs(*x);
                let (dx, dw, db) = conv2d_backward(self.value(*x), self.value(*w), g, *stride, *pad, need_dx)?;
                if let Some(dx) = dx {
                    self.accumulate(*x, dx);
                }
                self.accumulate(*w, dw);
                self.accumulate(*b, db);
            }
            Op::LeakyRelu { x, slope } => {
                let xv = self.value(*x);
                let d = Tensor {
                    shape: g.shape,
                    data: xv
                        .data
                        .iter()
                        .zip(&g.data)
                        .map(|(&a, &gg)| if a >= T::zero() { gg } else { *slope * gg })
                        .collect(),
                };
                self.accumulate(*x, d);
            }
            Op::Upsample2 { x } => {
                let [n, c, h, w] = self.shape(*x);
                let mut d = Tensor::zeros([n, c, h, w]);
                for p in 0..n * c {
                    let src = &g.data[p * 4 * h * w..(p + 1) * 4 * h * w];
                    let dst = &mut d.data[p * h * w..(p + 1) * h * w];
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            dst[(y / 2) * w + xx / 2] += src[y * 2 * w + xx];
                        }
                    }
                }
                self.accumulate(*x, d);
            }
            Op::MaxPool2 { x, argmax } => {
                let mut d = Tensor::zeros(self.shape(*x));
                for (o, &src) in argmax.iter().enumerate() {
                    d.data[src] += g.data[o];
                }
                self.accumulate(*x, d);
            }
            Op::Concat { a, b } => {
                let [n, ca, h, w] = self.shape(*a);
                let cb = self.shape(*b)[1];
                let mut da = Tensor::zeros([n, ca, h, w]);
                let mut db = Tensor::zeros([n, cb, h, w]);
                let (la, lb) = (ca * h * w, cb * h * w);
                for item in 0..n {
                    let src = &g.data[item * (la + lb)..(item + 1) * (la + lb)];
                    da.data[item * la..(item + 1) * la].copy_from_slice(&src[..la]);
                    db.data[item * lb..(item + 1) * lb].copy_from_slice(&src[la..]);
                }
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Add { a, b } => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.clone());
            }
            Op::Sub { a, b } => {
                self.accumulate(*a, g.clone());
                let neg = Tensor {
                    shape: g.shape,
                    data: g.data.iter().map(|&v| -v).collect(),
                };
                self.accumulate(*b, neg);
            }
            Op::Affine { x, scale } => {
                let d = Tensor {
                    shape: g.shape,
                    data: g.data.iter().map(|&v| *scale * v).collect(),
                };
                self.accumulate(*x, d);
            }
            Op::Select { mask, a, b } => {
                let mut da = Tensor::zeros(g.shape);
                let mut db = Tensor::zeros(g.shape);
                for (k, &m) in mask.iter().enumerate() {
                    if m {
                        da.data[k] = g.data[k];
                    } else {
                        db.data[k] = g.data[k];
                    }
                }
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Pad { x } => {
                let [n, c, h, w] = self.shape(*x);
                let [_, _, ho, wo] = g.shape;
                let mut d = Tensor::zeros([n, c, h, w]);
                for p in 0..n * c {
                    for y in 0..h {
                        d.data[(p * h + y) * w..(p * h + y + 1) * w]
                            .copy_from_slice(&g.data[(p * ho + y) * wo..(p * ho + y) * wo + w]);
                    }
                }
                self.accumulate(*x, d);
            }
            Op::Crop { x } => {
                let [n, c, h, w] = self.shape(*x);
                let [_, _, ho, wo] = g.shape;
                let mut d = Tensor::zeros([n, c, h, w]);
                for p in 0..n * c {
                    for y in 0..ho {
                        d.data[(p * h + y) * w..(p * h + y) * w + wo]
                            .copy_from_slice(&g.data[(p * ho + y) * wo..(p * ho + y + 1) * wo]);
                    }
                }
                self.accumulate(*x, d);
            }
            Op::Linear { x, op } => {
                let shape = self.shape(*x);
                let [ho, wo] = op.out_shape();
                let mut data = Vec::with_capacity(shape.iter().product());
                for item in 0..shape[0] {
                    data.extend(op.adjoint(&g.data[item * ho * wo..(item + 1) * ho * wo]));
                }
                self.accumulate(*x, Tensor { shape, data });
            }
            Op::L1 {
                a,
                diff_sign,
                weights,
                denom,
            } => {
                let scale = g.data[0] / *denom;
                let data = match weights {
                    Some(w) => diff_sign.iter().zip(w).map(|(&s, &wt)| s * wt * scale).collect(),
                    None => diff_sign.iter().map(|&s| s * scale).collect(),
                };
                let shape = self.shape(*a);
                self.accumulate(*a, Tensor { shape, data });
            }
            Op::Sum { terms } => {
                for &(v, w) in terms {
                    self.accumulate(v, Tensor::filled([1, 1, 1, 1], w * g.data[0]));
                }
            }
            Op::Dot { a, c } => {
                let shape = self.shape(*a);
                let data = c.iter().map(|&v| v * g.data[0]).collect();
                self.accumulate(*a, Tensor { shape, data });
            }
        }
        Ok(())
    }

    /// Gradient of the last backward pass at `v`; `None` if nothing reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Number of nodes on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}
