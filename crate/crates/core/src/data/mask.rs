use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed::{self, STREAM_MASK};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    /// Axis-aligned square centered in the image.
    Center,
    /// Square of the same side at a seeded uniform position.
    RandomBlock,
}

impl fmt::Display for MaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskKind::Center => "center",
            MaskKind::RandomBlock => "random",
        })
    }
}

impl FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(MaskKind::Center),
            "random" | "random_block" => Ok(MaskKind::RandomBlock),
            other => Err(Error::Config(format!("unknown mask kind {other:?} (expected center or random)"))),
        }
    }
}

/// Square occlusion covering `coverage` of the image area.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskSpec {
    pub kind: MaskKind,
    pub coverage: f64,
    pub fill: f64,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec { kind: MaskKind::Center, coverage: 0.25, fill: 0.0, seed: 0 }
    }
}

impl MaskSpec {
    /// Side of the occluded square; zero coverage means no occlusion.
    pub fn side(&self, h: usize, w: usize) -> Result<usize> {
        if self.coverage == 0.0 {
            return Ok(0);
        }
        if !(self.coverage > 0.0 && self.coverage < 1.0) || self.coverage * ((h * w) as f64) < 1.0 {
            return Err(Error::Contract(format!(
                "mask coverage {} is degenerate for a {h}x{w} image",
                self.coverage
            )));
        }
        let side = (self.coverage.sqrt() * h.min(w) as f64).round() as usize;
        Ok(side.clamp(1, h.min(w)))
    }
}

/// Binary occlusion map `[1, H, W]` with 1 marking occluded pixels.
pub fn make_mask<T: Scalar>(spec: &MaskSpec, h: usize, w: usize) -> Result<Tensor<T>> {
    let side = spec.side(h, w)?;
    let mut map = Tensor::zeros([1, h, w]);
    if side == 0 {
        return Ok(map);
    }
    let (top, left) = match spec.kind {
        MaskKind::Center => ((h - side) / 2, (w - side) / 2),
        MaskKind::RandomBlock => {
            let mut rng = seed::rng(spec.seed, STREAM_MASK);
            (rng.random_range(0..=h - side), rng.random_range(0..=w - side))
        }
    };
    let data = map.data_mut();
    for y in top..top + side {
        data[y * w + left..y * w + left + side].fill(T::one());
    }
    Ok(map)
}

/// Replace occluded pixels with `fill` across all channels.
pub fn apply_mask<T: Scalar>(images: &Tensor<T>, mask: &Tensor<T>, fill: f64) -> Result<Tensor<T>> {
    let (_, _, h, w) = images.dims4()?;
    if mask.numel() != h * w || mask.shape().last() != Some(&w) {
        return Err(Error::dim(
            "apply_mask",
            format!("mask {:?} does not match images {:?}", mask.shape(), images.shape()),
        ));
    }
    let fill = T::of(fill);
    let m = mask.data();
    let mut out = images.clone();
    for plane in out.data_mut().chunks_mut(h * w) {
        for (v, &mv) in plane.iter_mut().zip(m) {
            if mv > T::zero() {
                *v = fill;
            }
        }
    }
    Ok(out)
}

/// Number of occluded pixels in a binary map.
pub fn mask_area<T: Scalar>(mask: &Tensor<T>) -> usize {
    mask.data().iter().filter(|&&v| v > T::zero()).count()
}
