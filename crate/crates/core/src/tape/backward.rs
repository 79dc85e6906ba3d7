//! Reverse sweep and the local gradient rules of every recorded operation.

use super::ops::{gemm_into, sigmoid};
use super::{BinaryKind, Op, Tape, UnaryKind, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{split_axis, Tensor};

/// Gradients of a scalar loss with respect to the leaves of a tape.
pub struct Gradients<S> {
    grads: Vec<Option<Vec<S>>>,
    shapes: Vec<Vec<usize>>,
}

impl<S: Scalar> Gradients<S> {
    /// Gradient buffer for `v`, or `None` when `v` is not a reachable leaf.
    pub fn raw(&self, v: Var) -> Option<&[S]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for `v` shaped like its value; zeros when unreachable.
    pub fn get(&self, v: Var) -> Tensor<S> {
        let shape = &self.shapes[v.0];
        match self.raw(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Moves the buffer out, leaving nothing behind.
    pub fn take(&mut self, v: Var) -> Tensor<S> {
        let shape = &self.shapes[v.0];
        match self.grads.get_mut(v.0).and_then(Option::take) {
            Some(g) => Tensor::new(shape, g).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Vec<S>>, g: Vec<S>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, v)| *a = *a + v),
        None => *slot = Some(g),
    }
}

impl<S: Scalar> Tape<S> {
    /// Back-propagates from a one-element `loss`. Only leaves keep their
    /// gradients; intermediate buffers are released during the sweep.
    pub fn backward(&self, loss: Var) -> Result<Gradients<S>> {
        let loss_shape = self.shape(loss);
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(loss_shape.to_vec()));
        }
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![S::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = None;
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            for (input, gi) in self.local_grads(i, g) {
                accumulate(&mut grads[input.0], gi);
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Vector-Jacobian products of node `i` for each input that needs one.
    /// `g` is consumed so pass-through rules can reuse its buffer.
    fn local_grads(&self, i: usize, mut g: Vec<S>) -> Vec<(Var, Vec<S>)> {
        let node = &self.nodes[i];
        let out = node.value.data();
        let mut res = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Unary { x, kind } => {
                let xv = self.value(*x).data();
                let zero = S::zero();
                match kind {
                    UnaryKind::Exp => g.iter_mut().zip(out).for_each(|(g, &y)| *g = *g * y),
                    UnaryKind::Log => g.iter_mut().zip(xv).for_each(|(g, &x)| *g = *g / x),
                    UnaryKind::Sigmoid => g
                        .iter_mut()
                        .zip(out)
                        .for_each(|(g, &y)| *g = *g * y * (S::one() - y)),
                    UnaryKind::Tanh => g
                        .iter_mut()
                        .zip(out)
                        .for_each(|(g, &y)| *g = *g * (S::one() - y * y)),
                    UnaryKind::Relu => g.iter_mut().zip(xv).for_each(|(g, &x)| {
                        if x <= zero {
                            *g = zero;
                        }
                    }),
                    UnaryKind::Neg => g.iter_mut().for_each(|g| *g = -*g),
                    UnaryKind::Softplus => g
                        .iter_mut()
                        .zip(xv)
                        .for_each(|(g, &x)| *g = *g * sigmoid(x)),
                    UnaryKind::Square => g.iter_mut().zip(xv).for_each(|(g, &x)| *g = *g * (x + x)),
                    UnaryKind::Sqrt => {
                        let half = S::lit(0.5);
                        g.iter_mut().zip(out).for_each(|(g, &y)| *g = *g * half / y)
                    }
                }
                res.push((*x, g));
            }
            Op::Binary { a, b, kind, map } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let blen = bv.len();
                if self.wants(*b) {
                    let gb = match kind {
                        BinaryKind::Add => map.reduce(&g, blen),
                        BinaryKind::Sub => {
                            let mut r = map.reduce(&g, blen);
                            r.iter_mut().for_each(|v| *v = -*v);
                            r
                        }
                        BinaryKind::Mul => {
                            let pre: Vec<S> = g.iter().zip(av).map(|(&g, &a)| g * a).collect();
                            map.reduce(&pre, blen)
                        }
                        BinaryKind::Div => {
                            let ratio = map.zip(out, bv, |y, b| y / b);
                            let pre: Vec<S> =
                                g.iter().zip(ratio).map(|(&g, r)| -g * r).collect();
                            map.reduce(&pre, blen)
                        }
                    };
                    res.push((*b, gb));
                }
                if self.wants(*a) {
                    let ga = match kind {
                        BinaryKind::Add | BinaryKind::Sub => g,
                        BinaryKind::Mul => map.zip(&g, bv, |g, b| g * b),
                        BinaryKind::Div => map.zip(&g, bv, |g, b| g / b),
                    };
                    res.push((*a, ga));
                }
            }
            Op::Scale { x, factor } => {
                g.iter_mut().for_each(|v| *v = *v * *factor);
                res.push((*x, g));
            }
            Op::Shift { x } | Op::Reshape { x } => res.push((*x, g)),
            Op::Matmul { a, b, dims } => {
                let (m, k, n) = (dims.m, dims.k, dims.n);
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let (a_view, b_view) = (dims.a_view(), dims.b_view());
                let g_view = (n as isize, 1);
                if self.wants(*a) {
                    // d op(A) = G · op(B)^T, written through A's layout.
                    let mut ga = vec![S::zero(); av.len()];
                    for t in 0..dims.batch {
                        gemm_into(
                            m,
                            n,
                            k,
                            &g[t * m * n..(t + 1) * m * n],
                            g_view,
                            &bv[t * k * n..(t + 1) * k * n],
                            (b_view.1, b_view.0),
                            &mut ga[t * m * k..(t + 1) * m * k],
                            a_view,
                            S::zero(),
                        );
                    }
                    res.push((*a, ga));
                }
                if self.wants(*b) {
                    // d op(B) = op(A)^T · G, written through B's layout.
                    let mut gb = vec![S::zero(); bv.len()];
                    for t in 0..dims.batch {
                        gemm_into(
                            k,
                            m,
                            n,
                            &av[t * m * k..(t + 1) * m * k],
                            (a_view.1, a_view.0),
                            &g[t * m * n..(t + 1) * m * n],
                            g_view,
                            &mut gb[t * k * n..(t + 1) * k * n],
                            b_view,
                            S::zero(),
                        );
                    }
                    res.push((*b, gb));
                }
            }
            Op::Linear { x, w, b, relu } => {
                if *relu {
                    let zero = S::zero();
                    g.iter_mut().zip(out).for_each(|(g, &y)| {
                        if y <= zero {
                            *g = zero;
                        }
                    });
                }
                let (xv, wv) = (self.value(*x).data(), self.value(*w).data());
                let fan_out = self.value(*b).len();
                let fan_in = wv.len() / fan_out;
                let rows = xv.len() / fan_in;
                if self.wants(*x) {
                    let mut gx = vec![S::zero(); xv.len()];
                    gemm_into(
                        rows,
                        fan_out,
                        fan_in,
                        &g,
                        (fan_out as isize, 1),
                        wv,
                        (1, fan_out as isize),
                        &mut gx,
                        (fan_in as isize, 1),
                        S::zero(),
                    );
                    res.push((*x, gx));
                }
                if self.wants(*w) {
                    let mut gw = vec![S::zero(); wv.len()];
                    gemm_into(
                        fan_in,
                        rows,
                        fan_out,
                        xv,
                        (1, fan_in as isize),
                        &g,
                        (fan_out as isize, 1),
                        &mut gw,
                        (fan_out as isize, 1),
                        S::zero(),
                    );
                    res.push((*w, gw));
                }
                if self.wants(*b) {
                    let mut gb = vec![S::zero(); fan_out];
                    for row in g.chunks_exact(fan_out) {
                        for (o, &v) in gb.iter_mut().zip(row) {
                            *o = *o + v;
                        }
                    }
                    res.push((*b, gb));
                }
            }
            Op::Softmax { x, axis } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let mut gx = vec![S::zero(); g.len()];
                for o in 0..outer {
                    let base = o * n * inner;
                    for c in 0..inner {
                        let at = |j: usize| base + j * inner + c;
                        let dot: S = (0..n).map(|j| g[at(j)] * out[at(j)]).sum();
                        for j in 0..n {
                            gx[at(j)] = out[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
                res.push((*x, gx));
            }
            Op::Sum { x, axis, mean } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let scale = if *mean {
                    S::one() / S::lit(n as f64)
                } else {
                    S::one()
                };
                let mut gx = Vec::with_capacity(outer * n * inner);
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for _ in 0..n {
                        gx.extend(src.iter().map(|&v| v * scale));
                    }
                }
                res.push((*x, gx));
            }
            Op::SumAll { x, mean } => {
                let len = self.value(*x).len();
                let v = if *mean {
                    g[0] / S::lit(len as f64)
                } else {
                    g[0]
                };
                res.push((*x, vec![v; len]));
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for &v in inputs {
                    let n = self.shape(v)[*axis];
                    if self.wants(v) {
                        let mut gv = Vec::with_capacity(outer * n * inner);
                        for o in 0..outer {
                            let base = (o * total + offset) * inner;
                            gv.extend_from_slice(&g[base..base + n * inner]);
                        }
                        res.push((v, gv));
                    }
                    offset += n;
                }
            }
            Op::Narrow { x, axis, start } => {
                let (outer, n, inner) = split_axis(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                let mut gx = vec![S::zero(); outer * n * inner];
                for o in 0..outer {
                    let dst = (o * n + start) * inner;
                    let src = o * len * inner;
                    gx[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                res.push((*x, gx));
            }
            Op::BroadcastTo { x, map } => {
                res.push((*x, map.reduce(&g, self.value(*x).len())));
            }
            Op::SegmentSum { x, lens } => {
                let row = out.len() / lens.len();
                let mut gx = Vec::with_capacity(self.value(*x).len());
                for (s, &len) in lens.iter().enumerate() {
                    for _ in 0..len {
                        gx.extend_from_slice(&g[s * row..(s + 1) * row]);
                    }
                }
                res.push((*x, gx));
            }
            Op::NormalizeLast { x } => {
                let d = *node.value.shape().last().expect("rank >= 1");
                let xv = self.value(*x).data();
                let mut gx = vec![S::zero(); xv.len()];
                for r in 0..xv.len() / d {
                    let span = r * d..(r + 1) * d;
                    let norm = xv[span.clone()].iter().map(|&v| v * v).sum::<S>().sqrt();
                    if norm == S::zero() {
                        continue;
                    }
                    let y = &out[span.clone()];
                    let gr = &g[span.clone()];
                    let dot: S = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for ((dst, &yj), &gj) in gx[span].iter_mut().zip(y).zip(gr) {
                        *dst = (gj - yj * dot) / norm;
                    }
                }
                res.push((*x, gx));
            }
            Op::Custom { inputs, backward } => {
                let values: Vec<&Tensor<S>> = inputs.iter().map(|&v| self.value(v)).collect();
                let local = backward(&values, &node.value, &g);
                for (&v, gv) in inputs.iter().zip(local) {
                    if self.wants(v) {
                        res.push((v, gv));
                    }
                }
            }
        }
        res
    }
}
