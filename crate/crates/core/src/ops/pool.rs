use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// 2×2/stride-2 max pooling. Returns the pooled values and, for each output
/// element, the flat input index it was taken from. Ties go to the first
/// element of the window in row-major order.
pub(crate) fn maxpool2x2_forward<T: Scalar>(
    shape: &[usize],
    x: &[T],
) -> Result<(Vec<usize>, Vec<T>, Vec<u32>)> {
    let &[n, c, h, w] = shape else {
        return Err(Error::dim("maxpool2d", format!("expected rank 4, got {shape:?}")));
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::dim("maxpool2d", format!("spatial extent must be even, got {shape:?}")));
    }
    if x.len() > u32::MAX as usize {
        return Err(Error::dim("maxpool2d", "input too large for 32-bit argmax indices"));
    }
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((vec![n, c, ho, wo], out, arg))
}

pub(crate) fn maxpool2x2_backward<T: Scalar>(input_len: usize, argmax: &[u32], dy: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&i, &g) in argmax.iter().zip(dy) {
        dx[i as usize] = dx[i as usize] + g;
    }
    dx
}

pub(crate) fn upsample2x_forward<T: Scalar>(shape: &[usize], x: &[T]) -> Result<(Vec<usize>, Vec<T>)> {
    let &[n, c, h, w] = shape else {
        return Err(Error::dim("upsample2x", format!("expected rank 4, got {shape:?}")));
    };
    let mut out = Vec::with_capacity(x.len() * 4);
    for plane in x.chunks(h * w) {
        for row in plane.chunks(w) {
            for _ in 0..2 {
                for &v in row {
                    out.push(v);
                    out.push(v);
                }
            }
        }
    }
    Ok((vec![n, c, 2 * h, 2 * w], out))
}

pub(crate) fn upsample2x_backward<T: Scalar>(shape: &[usize], dy: &[T]) -> Vec<T> {
    let (h, w) = (shape[2], shape[3]);
    let planes = shape[0] * shape[1];
    let mut dx = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        for y in 0..h {
            for x in 0..w {
                let base = p * 4 * h * w + (2 * y) * (2 * w) + 2 * x;
                let s = dy[base] + dy[base + 1] + dy[base + 2 * w] + dy[base + 2 * w + 1];
                dx[(p * h + y) * w + x] = s;
            }
        }
    }
    dx
}

pub(crate) fn global_avg_pool_forward<T: Scalar>(
    shape: &[usize],
    x: &[T],
) -> Result<(Vec<usize>, Vec<T>)> {
    let &[n, c, h, w] = shape else {
        return Err(Error::dim("global_avg_pool", format!("expected rank 4, got {shape:?}")));
    };
    let area = T::of((h * w) as f64);
    let out = x.chunks(h * w).map(|p| p.iter().copied().sum::<T>() / area).collect();
    Ok((vec![n, c], out))
}

pub(crate) fn global_avg_pool_backward<T: Scalar>(shape: &[usize], dy: &[T]) -> Vec<T> {
    let hw = shape[2] * shape[3];
    let area = T::of(hw as f64);
    dy.iter().flat_map(|&g| std::iter::repeat_n(g / area, hw)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_window_takes_max() {
        let (shape, y, arg) = maxpool2x2_forward(&[1, 1, 2, 2], &[1.0f32, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(shape, vec![1, 1, 1, 1]);
        assert_eq!(y, vec![4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn ties_route_to_first_in_window() {
        let x = vec![7.0f64; 16];
        let (_, y, arg) = maxpool2x2_forward(&[1, 1, 4, 4], &x).unwrap();
        assert!(y.iter().all(|&v| v == 7.0));
        let dx = maxpool2x2_backward(16, &arg, &[1.0, 2.0, 3.0, 4.0]);
        let mut want = vec![0.0; 16];
        want[0] = 1.0;
        want[2] = 2.0;
        want[8] = 3.0;
        want[10] = 4.0;
        assert_eq!(dx, want);
    }

    #[test]
    fn odd_extent_is_rejected() {
        assert!(maxpool2x2_forward(&[1, 1, 3, 4], &[0.0f32; 12]).is_err());
    }

    #[test]
    fn upsample_replicates() {
        let (shape, y) = upsample2x_forward(&[1, 1, 1, 1], &[5.0f32]).unwrap();
        assert_eq!(shape, vec![1, 1, 2, 2]);
        assert_eq!(y, vec![5.0; 4]);
        let (_, y) = upsample2x_forward(&[1, 1, 1, 2], &[1.0f32, 2.0]).unwrap();
        assert_eq!(y, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
        let dx = upsample2x_backward(&[1, 1, 1, 2], &[1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert_eq!(dx, vec![1.0 + 2.0 + 5.0 + 6.0, 3.0 + 4.0 + 7.0 + 8.0]);
    }

    #[test]
    fn gap_of_constant_map() {
        let (shape, y) = global_avg_pool_forward(&[2, 3, 4, 4], &vec![0.25f64; 96]).unwrap();
        assert_eq!(shape, vec![2, 3]);
        assert!(y.iter().all(|&v| v == 0.25));
    }
}
