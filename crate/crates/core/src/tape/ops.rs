//! Forward definitions of the recorded operations.

use super::{BinaryKind, BroadcastMap, MatmulDims, Op, Tape, UnaryKind, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, split_axis, Tensor};

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

#[inline]
pub(crate) fn softplus<S: Scalar>(x: S) -> S {
    // max(x, 0) + ln(1 + e^{-|x|})
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn apply_unary<S: Scalar>(kind: UnaryKind, x: S) -> S {
    match kind {
        UnaryKind::Exp => x.exp(),
        UnaryKind::Log => x.ln(),
        UnaryKind::Sigmoid => sigmoid(x),
        UnaryKind::Tanh => x.tanh(),
        UnaryKind::Relu => x.max(S::zero()),
        UnaryKind::Neg => -x,
        UnaryKind::Softplus => softplus(x),
        UnaryKind::Square => x * x,
        UnaryKind::Sqrt => x.sqrt(),
    }
}

pub(crate) fn apply_binary<S: Scalar>(kind: BinaryKind, a: S, b: S) -> S {
    match kind {
        BinaryKind::Add => a + b,
        BinaryKind::Sub => a - b,
        BinaryKind::Mul => a * b,
        BinaryKind::Div => a / b,
    }
}

fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(Error::InvalidAxis { op, axis, rank })
    } else {
        Ok(())
    }
}

/// Raw strided product used by the forward pass and by the gradient rules.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_into<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    a_view: (isize, isize),
    b: &[S],
    b_view: (isize, isize),
    c: &mut [S],
    c_view: (isize, isize),
    beta: S,
) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the views address exactly m*k, k*n and m*n elements of the
    // given slices, and `c` is a distinct mutable borrow.
    unsafe {
        S::gemm(
            m,
            k,
            n,
            S::one(),
            a.as_ptr(),
            a_view.0,
            a_view.1,
            b.as_ptr(),
            b_view.0,
            b_view.1,
            beta,
            c.as_mut_ptr(),
            c_view.0,
            c_view.1,
        );
    }
}

impl<S: Scalar> Tape<S> {
    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Var {
        let value = self.value(x).map(|v| apply_unary(kind, v));
        self.push(value, Op::Unary { x, kind }, &[x])
    }

    /// Elementwise `a (op) b` where `b` is broadcast onto `a`'s shape.
    pub fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        let map = BroadcastMap::new(binary_name(kind), self.shape(a), self.shape(b))?;
        let data = map.zip(self.value(a).data(), self.value(b).data(), |x, y| {
            apply_binary(kind, x, y)
        });
        let value = Tensor::new(self.shape(a), data)?;
        Ok(self.push(value, Op::Binary { a, b, kind, map }, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Log, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sigmoid, x)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Tanh, x)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Neg, x)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Softplus, x)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Square, x)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(UnaryKind::Sqrt, x)
    }

    /// `x * factor`.
    pub fn scale(&mut self, x: Var, factor: S) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale { x, factor }, &[x])
    }

    /// `x + offset`.
    pub fn shift(&mut self, x: Var, offset: S) -> Var {
        let value = self.value(x).map(|v| v + offset);
        self.push(value, Op::Shift { x }, &[x])
    }

    /// Matrix product of rank-2 operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) · op(b)` where `op` optionally transposes the last two axes.
    /// Operands are both rank 2 or both rank 3 with equal batch extent.
    pub fn matmul_t(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: sa.clone(),
            rhs: sb.clone(),
        };
        if sa.len() != sb.len() || !(sa.len() == 2 || sa.len() == 3) {
            return Err(mismatch());
        }
        let batched = sa.len() == 3;
        let (batch, ra, rb) = if batched {
            if sa[0] != sb[0] {
                return Err(mismatch());
            }
            (sa[0], &sa[1..], &sb[1..])
        } else {
            (1, &sa[..], &sb[..])
        };
        let (m, k) = if trans_a { (ra[1], ra[0]) } else { (ra[0], ra[1]) };
        let (kb, n) = if trans_b { (rb[1], rb[0]) } else { (rb[0], rb[1]) };
        if k != kb {
            return Err(mismatch());
        }
        let dims = MatmulDims {
            batch,
            m,
            k,
            n,
            trans_a,
            trans_b,
        };
        let mut out = vec![S::zero(); batch * m * n];
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for t in 0..batch {
                gemm_into(
                    m,
                    k,
                    n,
                    &ad[t * m * k..(t + 1) * m * k],
                    dims.a_view(),
                    &bd[t * k * n..(t + 1) * k * n],
                    dims.b_view(),
                    &mut out[t * m * n..(t + 1) * m * n],
                    (n as isize, 1),
                    S::zero(),
                );
            }
        }
        let shape = if batched { vec![batch, m, n] } else { vec![m, n] };
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Matmul { a, b, dims }, &[a, b]))
    }

    /// Affine map `x · w + b` of a `(rows, in)` batch with `w: (in, out)`
    /// and `b: (out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.linear_act(x, w, b, false)
    }

    /// `relu(x · w + b)` when `relu` is set, [`linear`](Self::linear)
    /// otherwise.
    pub fn linear_act(&mut self, x: Var, w: Var, b: Var, relu: bool) -> Result<Var> {
        let (sx, sw, sb) = (self.shape(x), self.shape(w), self.shape(b));
        if sx.len() != 2 || sw.len() != 2 || sb.len() != 1 || sx[1] != sw[0] || sw[1] != sb[0] {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: sx.to_vec(),
                rhs: sw.to_vec(),
            });
        }
        let (rows, fan_in, fan_out) = (sx[0], sx[1], sw[1]);
        let mut out = Vec::with_capacity(rows * fan_out);
        let bias = self.value(b).data();
        for _ in 0..rows {
            out.extend_from_slice(bias);
        }
        gemm_into(
            rows,
            fan_in,
            fan_out,
            self.value(x).data(),
            (fan_in as isize, 1),
            self.value(w).data(),
            (fan_out as isize, 1),
            &mut out,
            (fan_out as isize, 1),
            S::one(),
        );
        if relu {
            let zero = S::zero();
            out.iter_mut().for_each(|v| *v = v.max(zero));
        }
        let value = Tensor::new(&[rows, fan_out], out)?;
        Ok(self.push(value, Op::Linear { x, w, b, relu }, &[x, w, b]))
    }

    /// Normalized exponential along `axis`, computed with max subtraction.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("softmax", axis, shape.len())?;
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![S::zero(); src.len()];
        for o in 0..outer {
            let base = o * n * inner;
            for i in 0..inner {
                let at = |j: usize| base + j * inner + i;
                let mut max = S::neg_infinity();
                for j in 0..n {
                    max = max.max(src[at(j)]);
                }
                let mut total = S::zero();
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total = total + e;
                }
                for j in 0..n {
                    out[at(j)] = out[at(j)] / total;
                }
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::Softmax { x, axis }, &[x]))
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis(if mean { "mean" } else { "sum" }, axis, shape.len())?;
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![S::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                let row = &src[(o * n + j) * inner..(o * n + j + 1) * inner];
                for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(row) {
                    *acc = *acc + v;
                }
            }
        }
        if mean {
            let inv = S::one() / S::lit(n as f64);
            out.iter_mut().for_each(|v| *v = *v * inv);
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::Sum { x, axis, mean }, &[x]))
    }

    pub fn sum(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    /// Sum of every element, as a scalar.
    pub fn sum_all(&mut self, x: Var) -> Var {
        let total: S = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(total), Op::SumAll { x, mean: false }, &[x])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let src = self.value(x).data();
        let total: S = src.iter().copied().sum();
        let value = Tensor::scalar(total / S::lit(src.len() as f64));
        self.push(value, Op::SumAll { x, mean: true }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }

    /// Concatenation along `axis`; all other extents must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = match inputs.first() {
            Some(&v) => self.shape(v).to_vec(),
            None => return Err(Error::InvalidArgument("concat of zero tensors".into())),
        };
        check_axis("concat", axis, first.len())?;
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == first.len()
                && s.iter()
                    .zip(&first)
                    .enumerate()
                    .all(|(d, (a, b))| d == axis || a == b);
            if !compatible {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.clone(),
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = split_axis(&out_shape, axis);
        let mut out = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &v in inputs {
                let n = self.shape(v)[axis];
                let src = self.value(v).data();
                out.extend_from_slice(&src[o * n * inner..(o + 1) * n * inner]);
            }
        }
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        check_axis("narrow", axis, shape.len())?;
        if len == 0 || start + len > shape[axis] {
            return Err(Error::InvalidArgument(format!(
                "narrow [{start}, {}) exceeds extent {} of axis {axis}",
                start + len,
                shape[axis]
            )));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            out.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::Narrow { x, axis, start }, &[x]))
    }

    /// Repeats `x` along broadcast axes to reach `shape`.
    pub fn broadcast_to(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let map = BroadcastMap::new("broadcast_to", shape, self.shape(x))?;
        let zeros = vec![S::zero(); numel(shape)];
        let data = map.zip(&zeros, self.value(x).data(), |_, b| b);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::BroadcastTo { x, map }, &[x]))
    }

    /// Sums consecutive groups of rows along axis 0: group `g` covers the
    /// next `lens[g]` rows. Each output element is accumulated in ascending
    /// value order, so the result does not depend on the order of rows within
    /// a group.
    pub fn segment_sum(&mut self, x: Var, lens: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || lens.iter().sum::<usize>() != shape[0] || lens.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "segment lengths {lens:?} do not partition leading extent of {shape:?}"
            )));
        }
        let row: usize = shape[1..].iter().product();
        let src = self.value(x).data();
        let mut out = vec![S::zero(); lens.len() * row];
        let mut start = 0;
        let mut scratch = Vec::new();
        for (g, &len) in lens.iter().enumerate() {
            let dst = &mut out[g * row..(g + 1) * row];
            if len == 1 {
                dst.copy_from_slice(&src[start * row..(start + 1) * row]);
            } else {
                for (e, d) in dst.iter_mut().enumerate() {
                    scratch.clear();
                    scratch.extend((start..start + len).map(|t| src[t * row + e]));
                    scratch.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
                    *d = scratch.iter().fold(S::zero(), |acc, &v| acc + v);
                }
            }
            start += len;
        }
        let mut out_shape = shape;
        out_shape[0] = lens.len();
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(
            value,
            Op::SegmentSum {
                x,
                lens: lens.to_vec(),
            },
            &[x],
        ))
    }

    /// Scales every vector along the last axis to unit L2 norm. All-zero
    /// vectors stay zero.
    pub fn normalize_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape
            .last()
            .ok_or_else(|| Error::InvalidArgument("normalize_last of a scalar".into()))?;
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_exact_mut(d) {
            let norm = row.iter().map(|&v| v * v).sum::<S>().sqrt();
            if norm > S::zero() {
                row.iter_mut().for_each(|v| *v = *v / norm);
            }
        }
        let value = Tensor::new(&shape, out)?;
        Ok(self.push(value, Op::NormalizeLast { x }, &[x]))
    }
}

fn binary_name(kind: BinaryKind) -> &'static str {
    match kind {
        BinaryKind::Add => "add",
        BinaryKind::Sub => "sub",
        BinaryKind::Mul => "mul",
        BinaryKind::Div => "div",
    }
}
