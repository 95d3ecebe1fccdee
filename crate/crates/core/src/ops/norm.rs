//! Per-channel batch normalization kernels for `[N, C, H, W]` inputs.

use crate::tensor::Scalar;

/// Forward results kept for the backward pass.
pub(crate) struct BatchNormSaved<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    /// Biased batch mean and variance; empty when running statistics were used.
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

fn channel_iter<T: Scalar>(
    (n, c, hw): (usize, usize, usize),
    ch: usize,
    x: &[T],
) -> impl Iterator<Item = T> + '_ {
    (0..n).flat_map(move |i| x[(i * c + ch) * hw..][..hw].iter().copied())
}

pub(crate) fn forward<T: Scalar>(
    dims: (usize, usize, usize),
    x: &[T],
    gamma: &[T],
    beta: &[T],
    running: Option<(&[T], &[T])>,
    eps: T,
) -> (Vec<T>, BatchNormSaved<T>) {
    let (n, c, hw) = dims;
    let count = T::of((n * hw) as f64);
    let (mean, var): (Vec<T>, Vec<T>) = match running {
        Some((m, v)) => (m.to_vec(), v.to_vec()),
        None => (0..c)
            .map(|ch| {
                let mean = channel_iter(dims, ch, x).sum::<T>() / count;
                let var = channel_iter(dims, ch, x).map(|v| (v - mean) * (v - mean)).sum::<T>() / count;
                (mean, var)
            })
            .unzip(),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            for j in base..base + hw {
                xhat[j] = (x[j] - mean[ch]) * inv_std[ch];
                out[j] = gamma[ch] * xhat[j] + beta[ch];
            }
        }
    }
    let (batch_mean, batch_var) = if running.is_some() { (Vec::new(), Vec::new()) } else { (mean, var) };
    (out, BatchNormSaved { xhat, inv_std, batch_mean, batch_var })
}

/// Gradients with respect to `(input, gamma, beta)`.
pub(crate) fn backward<T: Scalar>(
    dims: (usize, usize, usize),
    saved: &BatchNormSaved<T>,
    gamma: &[T],
    dy: &[T],
    batch_stats: bool,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (n, c, hw) = dims;
    let count = T::of((n * hw) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            for (&g, &xh) in dy[base..base + hw].iter().zip(&saved.xhat[base..base + hw]) {
                dgamma[ch] = dgamma[ch] + g * xh;
                dbeta[ch] = dbeta[ch] + g;
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for i in 0..n {
        for ch in 0..c {
            let base = (i * c + ch) * hw;
            let scale = gamma[ch] * saved.inv_std[ch];
            for j in base..base + hw {
                dx[j] = if batch_stats {
                    scale / count * (count * dy[j] - dbeta[ch] - saved.xhat[j] * dgamma[ch])
                } else {
                    scale * dy[j]
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}
