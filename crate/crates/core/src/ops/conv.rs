//! 2-D convolution via im2col + GEMM.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gemm::{matmul, Layout};
use crate::tensor::Scalar;

/// Zero padding added to each side of the spatial plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Padding {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding {
    pub fn uniform(p: usize) -> Self {
        Padding { top: p, bottom: p, left: p, right: p }
    }

    /// Shape-preserving padding for a `k×k` kernel at stride 1. Even kernels
    /// put the extra row/column on the top/left side.
    pub fn same(k: usize) -> Self {
        let total = k.saturating_sub(1);
        let after = total / 2;
        let before = total - after;
        Padding { top: before, bottom: after, left: before, right: after }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: Padding,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        bias: &[usize],
        stride: usize,
        pad: Padding,
    ) -> Result<Self> {
        let mismatch = |why: &str| {
            Error::dim(
                "conv2d",
                format!("{why}: input {input:?}, weight {weight:?}, bias {bias:?}"),
            )
        };
        let (&[n, cin, h, w], &[cout, wcin, kh, kw]) = (input, weight) else {
            return Err(mismatch("input and weight must be rank 4"));
        };
        if wcin != cin {
            return Err(mismatch("input channels do not match weight"));
        }
        if bias != [cout] {
            return Err(mismatch("bias must have one entry per output channel"));
        }
        if stride == 0 {
            return Err(mismatch("stride must be positive"));
        }
        let hp = h + pad.top + pad.bottom;
        let wp = w + pad.left + pad.right;
        if kh > hp || kw > wp {
            return Err(mismatch("kernel larger than padded input"));
        }
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            ho: (hp - kh) / stride + 1,
            wo: (wp - kw) / stride + 1,
        })
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.ho, self.wo]
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn pixels(&self) -> usize {
        self.ho * self.wo
    }

    /// Input row/column hit by output position `o` and kernel offset `k`.
    #[inline]
    fn source(&self, o: usize, k: usize, before: usize, extent: usize) -> Option<usize> {
        (o * self.stride + k).checked_sub(before).filter(|&i| i < extent)
    }
}

fn im2col<T: Scalar>(g: &ConvGeom, x: &[T], col: &mut [T]) {
    let p = g.pixels();
    for c in 0..g.cin {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &mut col[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in 0..g.ho {
                    let dst = &mut row[oy * g.wo..(oy + 1) * g.wo];
                    match g.source(oy, ki, g.pad.top, g.h) {
                        None => dst.fill(T::zero()),
                        Some(iy) => {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d = match g.source(ox, kj, g.pad.left, g.w) {
                                    Some(ix) => plane[iy * g.w + ix],
                                    None => T::zero(),
                                };
                            }
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(g: &ConvGeom, col: &[T], dx: &mut [T]) {
    let p = g.pixels();
    for c in 0..g.cin {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = &col[((c * g.kh + ki) * g.kw + kj) * p..][..p];
                for oy in 0..g.ho {
                    let Some(iy) = g.source(oy, ki, g.pad.top, g.h) else { continue };
                    for ox in 0..g.wo {
                        if let Some(ix) = g.source(ox, kj, g.pad.left, g.w) {
                            plane[iy * g.w + ix] = plane[iy * g.w + ix] + row[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn forward<T: Scalar>(g: &ConvGeom, x: &[T], weight: &[T], bias: &[T]) -> Vec<T> {
    let (k, p) = (g.patch(), g.pixels());
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * p;
    let mut out = vec![T::zero(); g.n * out_per];
    out.par_chunks_mut(out_per).enumerate().for_each(|(i, y)| {
        let mut col = vec![T::zero(); k * p];
        im2col(g, &x[i * in_per..(i + 1) * in_per], &mut col);
        matmul(g.cout, k, p, weight, Layout::Normal, &col, Layout::Normal, y, false);
        for (co, row) in y.chunks_mut(p).enumerate() {
            let b = bias[co];
            row.iter_mut().for_each(|v| *v = *v + b);
        }
    });
    out
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn backward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    weight: &[T],
    dy: &[T],
    need: [bool; 3],
) -> ConvGrads<T> {
    let [need_x, need_w, need_b] = need;
    let (k, p) = (g.patch(), g.pixels());
    let in_per = g.cin * g.h * g.w;
    let out_per = g.cout * p;

    let mut dx = need_x.then(|| vec![T::zero(); g.n * in_per]);
    // Per-image weight gradients are reduced afterwards in image order, which
    // keeps the sum independent of how rayon schedules the images.
    let per_image = |i: usize, dxi: Option<&mut [T]>| -> Option<Vec<T>> {
        let dyi = &dy[i * out_per..(i + 1) * out_per];
        let dwi = need_w.then(|| {
            let mut col = vec![T::zero(); k * p];
            im2col(g, &x[i * in_per..(i + 1) * in_per], &mut col);
            let mut dwi = vec![T::zero(); g.cout * k];
            matmul(g.cout, p, k, dyi, Layout::Normal, &col, Layout::Transposed, &mut dwi, false);
            dwi
        });
        if let Some(dxi) = dxi {
            let mut dcol = vec![T::zero(); k * p];
            matmul(k, g.cout, p, weight, Layout::Transposed, dyi, Layout::Normal, &mut dcol, false);
            col2im(g, &dcol, dxi);
        }
        dwi
    };
    let partial: Vec<Option<Vec<T>>> = match dx.as_mut() {
        Some(dx) => dx
            .par_chunks_mut(in_per)
            .enumerate()
            .map(|(i, dxi)| per_image(i, Some(dxi)))
            .collect(),
        None => (0..g.n).into_par_iter().map(|i| per_image(i, None)).collect(),
    };
    let dw = need_w.then(|| {
        let mut acc = vec![T::zero(); g.cout * k];
        for part in partial.iter().flatten() {
            acc.iter_mut().zip(part).for_each(|(a, &v)| *a = *a + v);
        }
        acc
    });
    let db = need_b.then(|| {
        let mut acc = vec![T::zero(); g.cout];
        for i in 0..g.n {
            for (co, a) in acc.iter_mut().enumerate() {
                let row = &dy[i * out_per + co * p..][..p];
                *a = *a + row.iter().copied().sum::<T>();
            }
        }
        acc
    });
    ConvGrads { input: dx, weight: dw, bias: db }
}
