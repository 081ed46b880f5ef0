//! Elementwise arithmetic with trailing-dimension broadcasting.
//!
//! Shapes are aligned from the right; a dimension matches when the extents
//! are equal or one of them is 1 (missing leading dimensions count as 1).
//! Backward reduces each operand's gradient over its broadcast axes.

use super::{custom_op, unary_op, Tensor};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// Broadcast shape of `a` and `b` under trailing-dimension rules, or `None`
/// when the shapes are incompatible.
pub fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0usize; rank];
    for i in 0..rank {
        let da = if i < rank - a.len() { 1 } else { a[i - (rank - a.len())] };
        let db = if i < rank - b.len() { 1 } else { b[i - (rank - b.len())] };
        if da == db || da == 1 || db == 1 {
            out[i] = da.max(db);
        } else {
            return None;
        }
    }
    Some(out)
}

/// Row-major strides for `shape`.
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Materializes `data` (of `shape`) broadcast to `target`.
pub(crate) fn expand_to<T: Scalar>(data: &[T], shape: &[usize], target: &[usize]) -> Vec<T> {
    if shape == target {
        return data.to_vec();
    }
    let rank = target.len();
    let offset = rank - shape.len();
    let src_strides = strides(shape);
    // stride 0 on broadcast axes makes the walk read the same element
    let mut eff = vec![0usize; rank];
    for i in 0..shape.len() {
        if shape[i] != 1 {
            eff[offset + i] = src_strides[i];
        }
    }
    let n: usize = target.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(data[src]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += eff[ax];
            if idx[ax] < target[ax] {
                break;
            }
            src -= eff[ax] * target[ax];
            idx[ax] = 0;
        }
    }
    out
}

/// Sums `data` (of broadcast shape `from`) down to `to`, reversing a
/// broadcast: summed over leading extra axes and axes where `to` is 1.
pub(crate) fn reduce_to<T: Scalar>(data: &[T], from: &[usize], to: &[usize]) -> Vec<T> {
    if from == to {
        return data.to_vec();
    }
    let rank = from.len();
    let offset = rank - to.len();
    let to_strides = strides(to);
    let mut eff = vec![0usize; rank];
    for i in 0..to.len() {
        if to[i] != 1 {
            eff[offset + i] = to_strides[i];
        }
    }
    let out_len: usize = to.iter().product();
    let mut out = vec![T::zero(); out_len];
    let mut idx = vec![0usize; rank];
    let mut dst = 0usize;
    for &v in data {
        out[dst] = out[dst] + v;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            dst += eff[ax];
            if idx[ax] < from[ax] {
                break;
            }
            dst -= eff[ax] * from[ax];
            idx[ax] = 0;
        }
    }
    out
}

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
    Div,
}

impl<T: Scalar> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, kind: BinKind, op: &'static str) -> Result<Tensor<T>> {
        let out_shape =
            broadcast_shapes(self.shape(), other.shape()).ok_or(CoreError::ShapeMismatch {
                op,
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            })?;
        let a = expand_to(&self.data(), self.shape(), &out_shape);
        let b = expand_to(&other.data(), other.shape(), &out_shape);
        let data: Vec<T> = match kind {
            BinKind::Add => a.iter().zip(&b).map(|(&x, &y)| x + y).collect(),
            BinKind::Sub => a.iter().zip(&b).map(|(&x, &y)| x - y).collect(),
            BinKind::Mul => a.iter().zip(&b).map(|(&x, &y)| x * y).collect(),
            BinKind::Div => a.iter().zip(&b).map(|(&x, &y)| x / y).collect(),
        };

        let lhs = self.clone();
        let rhs = other.clone();
        let lhs_shape = self.shape().to_vec();
        let rhs_shape = other.shape().to_vec();
        let big = out_shape.clone();
        let backward = move |grad: &[T], store: &mut super::GradStore<T>| {
            let (da, db): (Vec<T>, Vec<T>) = match kind {
                BinKind::Add => (grad.to_vec(), grad.to_vec()),
                BinKind::Sub => (grad.to_vec(), grad.iter().map(|&g| -g).collect()),
                BinKind::Mul => {
                    let av = expand_to(&lhs.data(), &lhs_shape, &big);
                    let bv = expand_to(&rhs.data(), &rhs_shape, &big);
                    (
                        grad.iter().zip(&bv).map(|(&g, &y)| g * y).collect(),
                        grad.iter().zip(&av).map(|(&g, &x)| g * x).collect(),
                    )
                }
                BinKind::Div => {
                    let av = expand_to(&lhs.data(), &lhs_shape, &big);
                    let bv = expand_to(&rhs.data(), &rhs_shape, &big);
                    (
                        grad.iter().zip(&bv).map(|(&g, &y)| g / y).collect(),
                        grad.iter()
                            .zip(av.iter().zip(&bv))
                            .map(|(&g, (&x, &y))| -g * x / (y * y))
                            .collect(),
                    )
                }
            };
            store.accumulate(&lhs, &reduce_to(&da, &big, &lhs_shape));
            store.accumulate(&rhs, &reduce_to(&db, &big, &rhs_shape));
        };
        Ok(custom_op(op, out_shape, data, &[self, other], backward))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinKind::Add, "add")
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinKind::Sub, "sub")
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinKind::Mul, "mul")
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinKind::Div, "div")
    }

    pub fn add_scalar(&self, v: T) -> Tensor<T> {
        unary_op("add_scalar", self, |x| x + v, move |_, _| T::one())
    }

    pub fn mul_scalar(&self, v: T) -> Tensor<T> {
        unary_op("mul_scalar", self, |x| x * v, move |_, _| v)
    }

    pub fn neg(&self) -> Tensor<T> {
        unary_op("neg", self, |x| -x, |_, _| -T::one())
    }

    pub fn exp(&self) -> Tensor<T> {
        unary_op("exp", self, |x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        unary_op("ln", self, |x| x.ln(), |x, _| T::one() / x)
    }

    pub fn sqrt(&self) -> Tensor<T> {
        unary_op(
            "sqrt",
            self,
            |x| x.sqrt(),
            |_, y| T::one() / (T::of_f64(2.0) * y),
        )
    }

    /// Clamps into `[lo, hi]`; gradient passes only through the interior.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        unary_op(
            "clamp",
            self,
            move |x| {
                if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                }
            },
            move |x, _| {
                if x > lo && x < hi {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }
}
