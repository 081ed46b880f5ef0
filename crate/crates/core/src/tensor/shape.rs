//! Shape-changing operations and global reductions; all differentiable.

use super::ops::{expand_to, reduce_to};
use super::{broadcast_shapes, custom_op, GradStore, Tensor};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Materializes the axis swap `ax0 <-> ax1` of a row-major buffer.
fn swap_axes_slice<T: Scalar>(data: &[T], shape: &[usize], ax0: usize, ax1: usize) -> Vec<T> {
    let rank = shape.len();
    let mut out_shape = shape.to_vec();
    out_shape.swap(ax0, ax1);
    let out_strides = row_major_strides(&out_shape);
    let mut out = vec![T::zero(); data.len()];
    let mut idx = vec![0usize; rank];
    for &v in data {
        let mut dst = 0usize;
        for ax in 0..rank {
            let out_ax = if ax == ax0 {
                ax1
            } else if ax == ax1 {
                ax0
            } else {
                ax
            };
            dst += idx[ax] * out_strides[out_ax];
        }
        out[dst] = v;
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            if idx[ax] < shape[ax] {
                break;
            }
            idx[ax] = 0;
        }
    }
    out
}

impl<T: Scalar> Tensor<T> {
    /// Reinterprets the buffer with a new shape; element count must match.
    pub fn reshape(&self, new_shape: impl Into<Vec<usize>>) -> Result<Tensor<T>> {
        let new_shape = new_shape.into();
        let expected: usize = new_shape.iter().product();
        if expected != self.numel() {
            return Err(CoreError::ElementCount {
                shape: new_shape,
                expected,
                got: self.numel(),
            });
        }
        let input = self.clone();
        let backward = move |grad: &[T], store: &mut GradStore<T>| {
            store.accumulate(&input, grad);
        };
        Ok(custom_op(
            "reshape",
            new_shape,
            self.to_vec(),
            &[self],
            backward,
        ))
    }

    /// Swaps two axes.
    pub fn transpose(&self, ax0: usize, ax1: usize) -> Result<Tensor<T>> {
        let rank = self.rank();
        if ax0 >= rank || ax1 >= rank {
            return Err(CoreError::AxisOutOfRange {
                op: "transpose",
                axis: ax0.max(ax1),
                rank,
            });
        }
        let shape = self.shape().to_vec();
        let data = swap_axes_slice(&self.data(), &shape, ax0, ax1);
        let mut out_shape = shape;
        out_shape.swap(ax0, ax1);
        let input = self.clone();
        let grad_shape = out_shape.clone();
        let backward = move |grad: &[T], store: &mut GradStore<T>| {
            let d = swap_axes_slice(grad, &grad_shape, ax0, ax1);
            store.accumulate(&input, &d);
        };
        Ok(custom_op("transpose", out_shape, data, &[self], backward))
    }

    /// Concatenates tensors along `axis`; all other extents must agree.
    /// Backward splits the incoming gradient at the recorded offsets.
    pub fn concat(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| CoreError::config("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(CoreError::AxisOutOfRange {
                op: "concat",
                axis,
                rank,
            });
        }
        let mut axis_total = 0usize;
        for p in parts {
            if p.rank() != rank
                || p.shape()
                    .iter()
                    .zip(first.shape())
                    .enumerate()
                    .any(|(ax, (a, b))| ax != axis && a != b)
            {
                return Err(CoreError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
            axis_total += p.shape()[axis];
        }
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = axis_total;

        // outer = product of dims before axis, inner = product after
        let outer: usize = out_shape[..axis].iter().product();
        let inner: usize = out_shape[axis + 1..].iter().product();
        let out_row = axis_total * inner;
        let mut data = vec![T::zero(); outer * out_row];
        let mut offset = 0usize;
        let mut spans = Vec::with_capacity(parts.len());
        for p in parts {
            let extent = p.shape()[axis];
            let src = p.data();
            for o in 0..outer {
                let dst = o * out_row + offset * inner;
                let s = o * extent * inner;
                data[dst..dst + extent * inner].copy_from_slice(&src[s..s + extent * inner]);
            }
            spans.push((offset, extent));
            offset += extent;
        }

        let handles: Vec<Tensor<T>> = parts.iter().map(|p| (*p).clone()).collect();
        let backward = move |grad: &[T], store: &mut GradStore<T>| {
            for (part, &(off, extent)) in handles.iter().zip(&spans) {
                let mut d = vec![T::zero(); part.numel()];
                for o in 0..outer {
                    let src = o * out_row + off * inner;
                    let dst = o * extent * inner;
                    d[dst..dst + extent * inner].copy_from_slice(&grad[src..src + extent * inner]);
                }
                store.accumulate(part, &d);
            }
        };
        let inputs: Vec<&Tensor<T>> = parts.to_vec();
        Ok(custom_op("concat", out_shape, data, &inputs, backward))
    }

    /// Pairwise convenience over [`Tensor::concat`].
    pub fn concat_with(&self, other: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        Tensor::concat(&[self, other], axis)
    }

    /// Contiguous range `[start, end)` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<T>> {
        let rank = self.rank();
        if axis >= rank {
            return Err(CoreError::AxisOutOfRange {
                op: "slice",
                axis,
                rank,
            });
        }
        let extent = self.shape()[axis];
        if start >= end || end > extent {
            return Err(CoreError::config(format!(
                "slice range {start}..{end} invalid for axis extent {extent}"
            )));
        }
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = end - start;
        let outer: usize = self.shape()[..axis].iter().product();
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let width = end - start;
        let mut data = vec![T::zero(); outer * width * inner];
        {
            let src = self.data();
            for o in 0..outer {
                let s = o * extent * inner + start * inner;
                let d = o * width * inner;
                data[d..d + width * inner].copy_from_slice(&src[s..s + width * inner]);
            }
        }
        let input = self.clone();
        let in_numel = self.numel();
        let backward = move |grad: &[T], store: &mut GradStore<T>| {
            let mut d = vec![T::zero(); in_numel];
            for o in 0..outer {
                let dst = o * extent * inner + start * inner;
                let s = o * width * inner;
                d[dst..dst + width * inner].copy_from_slice(&grad[s..s + width * inner]);
            }
            store.accumulate(&input, &d);
        };
        Ok(custom_op("slice", out_shape, data, &[self], backward))
    }

    /// Materializes this tensor broadcast to `target`; backward sums the
    /// gradient back over the expanded axes.
    pub fn broadcast_to(&self, target: impl Into<Vec<usize>>) -> Result<Tensor<T>> {
        let target = target.into();
        let joined = broadcast_shapes(self.shape(), &target);
        if joined.as_deref() != Some(&target[..]) {
            return Err(CoreError::ShapeMismatch {
                op: "broadcast_to",
                lhs: self.shape().to_vec(),
                rhs: target,
            });
        }
        let data = expand_to(&self.data(), self.shape(), &target);
        let src_shape = self.shape().to_vec();
        let big = target.clone();
        let input = self.clone();
        let backward = move |grad: &[T], store: &mut GradStore<T>| {
            store.accumulate(&input, &reduce_to(grad, &big, &src_shape));
        };
        Ok(custom_op("broadcast_to", target, data, &[self], backward))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self
            .data()
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        let input = self.clone();
        let n = self.numel();
        let backward = move |grad: &[T], store: &mut GradStore<T>| {
            store.accumulate(&input, &vec![grad[0]; n]);
        };
        custom_op("sum", Vec::new(), vec![total], &[self], backward)
    }

    /// Arithmetic mean of all elements as a rank-0 tensor.
    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let scale = T::one() / T::from_usize(n.max(1)).expect("usize fits scalar");
        self.sum().mul_scalar(scale)
    }

    /// Index of the maximum along the last axis, one result per row.
    /// First occurrence wins on ties. Not differentiable.
    pub fn argmax_last_axis(&self) -> Vec<usize> {
        let last = *self.shape().last().unwrap_or(&1);
        let data = self.data();
        data.chunks(last.max(1))
            .map(|row| {
                let mut best = 0usize;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }
}
