use crate::error::{Error, Result};
use crate::gemm::{matmul, Layout};
use crate::tensor::Scalar;

pub(crate) fn affine_dims(input: &[usize], weight: &[usize], bias: &[usize]) -> Result<(usize, usize, usize)> {
    match (input, weight, bias) {
        (&[n, d], &[wd, k], &[bk]) if d == wd && k == bk => Ok((n, d, k)),
        _ => Err(Error::dim(
            "affine",
            format!("input {input:?}, weight {weight:?}, bias {bias:?} are not [N,D]·[D,K]+[K]"),
        )),
    }
}

pub(crate) fn affine_forward<T: Scalar>(
    (n, d, k): (usize, usize, usize),
    x: &[T],
    w: &[T],
    b: &[T],
) -> Vec<T> {
    let mut out = vec![T::zero(); n * k];
    matmul(n, d, k, x, Layout::Normal, w, Layout::Normal, &mut out, false);
    for row in out.chunks_mut(k) {
        row.iter_mut().zip(b).for_each(|(o, &bb)| *o = *o + bb);
    }
    out
}

/// Gradients with respect to `(input, weight, bias)`.
pub(crate) fn affine_backward<T: Scalar>(
    (n, d, k): (usize, usize, usize),
    x: &[T],
    w: &[T],
    dy: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut dx = vec![T::zero(); n * d];
    matmul(n, k, d, dy, Layout::Normal, w, Layout::Transposed, &mut dx, false);
    let mut dw = vec![T::zero(); d * k];
    matmul(d, n, k, x, Layout::Transposed, dy, Layout::Normal, &mut dw, false);
    let mut db = vec![T::zero(); k];
    for row in dy.chunks(k) {
        db.iter_mut().zip(row).for_each(|(a, &g)| *a = *a + g);
    }
    (dx, dw, db)
}
