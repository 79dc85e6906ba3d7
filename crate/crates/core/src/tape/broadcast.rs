//! Index mapping for right-aligned broadcasting of a smaller operand onto a
//! larger one.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::numel;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum BroadcastMap {
    /// Same element count: plain zip.
    Same,
    /// Single element repeated everywhere.
    Scalar,
    /// Operand repeats with period `len` (matches the trailing extents).
    Suffix(usize),
    /// Each operand element covers `inner` consecutive elements.
    Prefix(usize),
    /// Explicit index for every element of the larger tensor.
    General(Vec<usize>),
}

impl BroadcastMap {
    /// Mapping from `target` indices into `small`, or a shape error when
    /// `small` does not broadcast to `target`.
    pub(crate) fn new(op: &'static str, target: &[usize], small: &[usize]) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op,
            lhs: target.to_vec(),
            rhs: small.to_vec(),
        };
        if small.len() > target.len() {
            // Allow leading unit extents on the smaller operand.
            let extra = small.len() - target.len();
            if small[..extra].iter().any(|&d| d != 1) {
                return Err(mismatch());
            }
            return Self::new(op, target, &small[extra..]);
        }
        let rank = target.len();
        let mut aligned = vec![1usize; rank];
        aligned[rank - small.len()..].copy_from_slice(small);
        for (&t, &s) in target.iter().zip(&aligned) {
            if s != t && s != 1 {
                return Err(mismatch());
            }
        }
        let total = numel(target);
        let slen = numel(&aligned);
        if slen == total {
            return Ok(BroadcastMap::Same);
        }
        if slen == 1 {
            return Ok(BroadcastMap::Scalar);
        }
        // Positions where the operand actually varies.
        let varies: Vec<bool> = target
            .iter()
            .zip(&aligned)
            .map(|(&t, &s)| s == t && t != 1)
            .collect();
        let broadcast: Vec<bool> = target
            .iter()
            .zip(&aligned)
            .map(|(&t, &s)| s == 1 && t != 1)
            .collect();
        let last_broadcast = broadcast.iter().rposition(|&b| b);
        let first_varying = varies.iter().position(|&v| v);
        if let (Some(lb), Some(fv)) = (last_broadcast, first_varying) {
            if lb < fv {
                return Ok(BroadcastMap::Suffix(slen));
            }
        }
        let first_broadcast = broadcast.iter().position(|&b| b);
        let last_varying = varies.iter().rposition(|&v| v);
        if let (Some(fb), Some(lv)) = (first_broadcast, last_varying) {
            if lv < fb {
                return Ok(BroadcastMap::Prefix(total / slen));
            }
        }
        // General fallback: odometer over the target shape.
        let mut strides = vec![0usize; rank];
        let mut acc = 1;
        for d in (0..rank).rev() {
            if aligned[d] != 1 {
                strides[d] = acc;
            }
            acc *= aligned[d];
        }
        let mut index = Vec::with_capacity(total);
        let mut counter = vec![0usize; rank];
        for _ in 0..total {
            index.push(counter.iter().zip(&strides).map(|(c, s)| c * s).sum());
            for d in (0..rank).rev() {
                counter[d] += 1;
                if counter[d] < target[d] {
                    break;
                }
                counter[d] = 0;
            }
        }
        Ok(BroadcastMap::General(index))
    }

    /// `out[i] = f(big[i], small[map(i)])`.
    pub(crate) fn zip<S: Scalar>(&self, big: &[S], small: &[S], f: impl Fn(S, S) -> S) -> Vec<S> {
        match self {
            BroadcastMap::Same => big.iter().zip(small).map(|(&a, &b)| f(a, b)).collect(),
            BroadcastMap::Scalar => {
                let b = small[0];
                big.iter().map(|&a| f(a, b)).collect()
            }
            BroadcastMap::Suffix(len) => {
                let mut out = Vec::with_capacity(big.len());
                for chunk in big.chunks_exact(*len) {
                    out.extend(chunk.iter().zip(small).map(|(&a, &b)| f(a, b)));
                }
                out
            }
            BroadcastMap::Prefix(inner) => {
                let mut out = Vec::with_capacity(big.len());
                for (chunk, &b) in big.chunks_exact(*inner).zip(small) {
                    out.extend(chunk.iter().map(|&a| f(a, b)));
                }
                out
            }
            BroadcastMap::General(index) => big
                .iter()
                .zip(index)
                .map(|(&a, &j)| f(a, small[j]))
                .collect(),
        }
    }

    /// Sums `values` (laid out like the target) into a buffer shaped like the
    /// smaller operand.
    pub(crate) fn reduce<S: Scalar>(&self, values: &[S], small_len: usize) -> Vec<S> {
        let mut out = vec![S::zero(); small_len];
        match self {
            BroadcastMap::Same => out.copy_from_slice(values),
            BroadcastMap::Scalar => out[0] = values.iter().copied().sum(),
            BroadcastMap::Suffix(len) => {
                for chunk in values.chunks_exact(*len) {
                    for (o, &v) in out.iter_mut().zip(chunk) {
                        *o = *o + v;
                    }
                }
            }
            BroadcastMap::Prefix(inner) => {
                for (o, chunk) in out.iter_mut().zip(values.chunks_exact(*inner)) {
                    *o = chunk.iter().copied().sum();
                }
            }
            BroadcastMap::General(index) => {
                for (&v, &j) in values.iter().zip(index) {
                    out[j] = out[j] + v;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn general_oracle(target: &[usize], small: &[usize]) -> Vec<usize> {
        // Brute-force multi-index walk.
        let rank = target.len();
        let mut aligned = vec![1usize; rank];
        aligned[rank - small.len()..].copy_from_slice(small);
        let total: usize = target.iter().product();
        (0..total)
            .map(|mut flat| {
                let mut idx = vec![0; rank];
                for d in (0..rank).rev() {
                    idx[d] = flat % target[d];
                    flat /= target[d];
                }
                let mut j = 0;
                for d in 0..rank {
                    let i = if aligned[d] == 1 { 0 } else { idx[d] };
                    j = j * aligned[d] + i;
                }
                j
            })
            .collect()
    }

    fn expand(map: &BroadcastMap, total: usize, small_len: usize) -> Vec<usize> {
        let big: Vec<f64> = vec![0.0; total];
        let small: Vec<f64> = (0..small_len).map(|v| v as f64).collect();
        map.zip(&big, &small, |_, b| b)
            .into_iter()
            .map(|v| v as usize)
            .collect()
    }

    #[test]
    fn classifies_and_matches_oracle() {
        let cases: &[(&[usize], &[usize])] = &[
            (&[2, 3], &[2, 3]),
            (&[2, 3], &[1]),
            (&[2, 3], &[3]),
            (&[4, 2, 3], &[2, 3]),
            (&[4, 5, 1], &[4, 5, 1]),
            (&[4, 5, 3], &[4, 5, 1]),
            (&[4, 5, 3], &[4, 1, 3]),
            (&[4, 5, 3], &[1, 5, 1]),
            (&[2, 1, 3], &[1, 3]),
        ];
        for (target, small) in cases {
            let map = BroadcastMap::new("test", target, small).unwrap();
            let total = target.iter().product();
            let slen = small.iter().product();
            assert_eq!(
                expand(&map, total, slen),
                general_oracle(target, small),
                "{target:?} <- {small:?} ({map:?})"
            );
        }
        assert!(matches!(
            BroadcastMap::new("t", &[4, 5, 3], &[4, 5, 1]).unwrap(),
            BroadcastMap::Prefix(3)
        ));
        assert!(matches!(
            BroadcastMap::new("t", &[4, 5, 3], &[5, 3]).unwrap(),
            BroadcastMap::Suffix(15)
        ));
    }

    #[test]
    fn rejects_illegal_broadcast() {
        assert!(BroadcastMap::new("t", &[2, 3], &[2]).is_err());
        assert!(BroadcastMap::new("t", &[2, 3], &[4, 2, 3]).is_err());
    }

    #[test]
    fn reduce_is_adjoint_of_zip() {
        let target = [3, 4, 2];
        let small = [3, 1, 2];
        let map = BroadcastMap::new("t", &target, &small).unwrap();
        let values: Vec<f64> = (0..24).map(|v| v as f64).collect();
        let reduced = map.reduce(&values, 6);
        let index = general_oracle(&target, &small);
        let mut expected = vec![0.0; 6];
        for (v, j) in values.iter().zip(index) {
            expected[j] += v;
        }
        assert_eq!(reduced, expected);
    }
}
