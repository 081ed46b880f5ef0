//! Matrix products. `matmul` is the 2-D contract; `bmm` runs one product per
//! leading batch index for attention-style [batch, rows, cols] operands.

use super::{custom_op, GradStore, Tensor};
use crate::error::{CoreError, Result};
use crate::scalar::Scalar;

/// `out[m,n] += a[m,k] * b[k,n]`, row-major, ikj loop order.
pub(crate) fn matmul_slice<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + av * bv;
            }
        }
    }
}

fn transpose_slice<T: Scalar>(src: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

impl<T: Scalar> Tensor<T> {
    /// Standard matrix product of two rank-2 tensors.
    /// Gradients: dA = dC·Bᵀ, dB = Aᵀ·dC.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (ls, rs) = (self.shape(), other.shape());
        if ls.len() != 2 || rs.len() != 2 || ls[1] != rs[0] {
            return Err(CoreError::InnerDimMismatch {
                lhs: ls.to_vec(),
                rhs: rs.to_vec(),
            });
        }
        let (m, k, n) = (ls[0], ls[1], rs[1]);
        let mut data = vec![T::zero(); m * n];
        matmul_slice(&self.data(), &other.data(), &mut data, m, k, n);

        let lhs = self.clone();
        let rhs = other.clone();
        let backward = move |grad: &[T], store: &mut GradStore<T>| {
            // dA = dC @ Bᵀ
            let bt = transpose_slice(&rhs.data(), k, n);
            let mut da = vec![T::zero(); m * k];
            matmul_slice(grad, &bt, &mut da, m, n, k);
            store.accumulate(&lhs, &da);
            // dB = Aᵀ @ dC
            let at = transpose_slice(&lhs.data(), m, k);
            let mut db = vec![T::zero(); k * n];
            matmul_slice(&at, grad, &mut db, k, m, n);
            store.accumulate(&rhs, &db);
        };
        Ok(custom_op("matmul", vec![m, n], data, &[self, other], backward))
    }

    /// Batched matrix product of rank-3 tensors with equal batch extents.
    pub fn bmm(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (ls, rs) = (self.shape(), other.shape());
        if ls.len() != 3 || rs.len() != 3 || ls[0] != rs[0] || ls[2] != rs[1] {
            return Err(CoreError::InnerDimMismatch {
                lhs: ls.to_vec(),
                rhs: rs.to_vec(),
            });
        }
        let (batch, m, k, n) = (ls[0], ls[1], ls[2], rs[2]);
        let mut data = vec![T::zero(); batch * m * n];
        {
            let a = self.data();
            let b = other.data();
            for i in 0..batch {
                matmul_slice(
                    &a[i * m * k..(i + 1) * m * k],
                    &b[i * k * n..(i + 1) * k * n],
                    &mut data[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                );
            }
        }

        let lhs = self.clone();
        let rhs = other.clone();
        let backward = move |grad: &[T], store: &mut GradStore<T>| {
            let a = lhs.data().clone();
            let b = rhs.data().clone();
            let mut da = vec![T::zero(); batch * m * k];
            let mut db = vec![T::zero(); batch * k * n];
            for i in 0..batch {
                let g = &grad[i * m * n..(i + 1) * m * n];
                let bt = transpose_slice(&b[i * k * n..(i + 1) * k * n], k, n);
                matmul_slice(g, &bt, &mut da[i * m * k..(i + 1) * m * k], m, n, k);
                let at = transpose_slice(&a[i * m * k..(i + 1) * m * k], m, k);
                matmul_slice(at.as_slice(), g, &mut db[i * k * n..(i + 1) * k * n], k, m, n);
            }
            store.accumulate(&lhs, &da);
            store.accumulate(&rhs, &db);
        };
        Ok(custom_op(
            "bmm",
            vec![batch, m, n],
            data,
            &[self, other],
            backward,
        ))
    }
}
