//! Reconstruction, adversarial and combined losses.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// Lower bound applied to probabilities before taking logarithms.
pub const LOG_FLOOR: f64 = 1e-12;

/// Loss values of one training iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub iteration: u64,
    /// Pixel MSE between generator output and the unmasked target.
    pub l_rec: f32,
    /// Generator-side adversarial term.
    pub l_adv_g: f32,
    /// `l_rec + lambda_adv * l_adv_g`.
    pub l_total: f32,
    /// Discriminator loss on the real batch and the detached fakes.
    pub l_disc: f32,
}

/// The reconstruction-plus-adversarial sum, in the same order the tape uses.
pub fn total_value(l_rec: f32, l_adv_g: f32, lambda_adv: f64) -> f32 {
    l_rec + l_adv_g * lambda_adv as f32
}

/// Per-element weights for a batch `[N, C, H, W]` from a binary `[1, H, W]`
/// (or `[H, W]`) occlusion map: `region_weight` inside the mask, 1 outside.
fn region_weights<T: Scalar>(shape: &[usize], mask: &Tensor<T>, region_weight: f64) -> Result<Vec<T>> {
    let &[n, c, h, w] = shape else {
        return Err(Error::dim("reconstruction_loss", format!("expected rank 4, got {shape:?}")));
    };
    if mask.numel() != h * w {
        return Err(Error::dim(
            "reconstruction_loss",
            format!("mask {:?} does not cover a {h}x{w} image", mask.shape()),
        ));
    }
    let rw = T::of(region_weight);
    let plane: Vec<T> = mask.data().iter().map(|&m| if m > T::zero() { rw } else { T::one() }).collect();
    Ok((0..n * c).flat_map(|_| plane.iter().copied()).collect())
}

/// Mean squared error over all elements; with a mask and `region_weight ≠ 1`
/// the occluded terms are scaled by `region_weight` before averaging.
pub fn reconstruction_loss<T: Scalar>(
    tape: &mut Tape<T>,
    output: Var,
    target: Var,
    mask: Option<&Tensor<T>>,
    region_weight: f64,
) -> Result<Var> {
    let (so, st) = (tape.value(output).shape(), tape.value(target).shape());
    if so != st {
        return Err(Error::dim("reconstruction_loss", format!("output {so:?} vs target {st:?}")));
    }
    let weights = match mask {
        Some(m) if region_weight != 1.0 => Some(region_weights(so, m, region_weight)?),
        _ => None,
    };
    tape.weighted_mse(output, target, weights)
}

/// Discriminator loss: batch mean of `−ln D(real) − ln(1 − D(fake))`.
pub fn adversarial_loss_d<T: Scalar>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let real = tape.neg_log_mean(d_real, false, LOG_FLOOR)?;
    let fake = tape.neg_log_mean(d_fake, true, LOG_FLOOR)?;
    tape.add(real, fake)
}

/// Non-saturating generator loss: batch mean of `−ln D(G(x))`.
pub fn adversarial_loss_g<T: Scalar>(tape: &mut Tape<T>, d_fake: Var) -> Result<Var> {
    tape.neg_log_mean(d_fake, false, LOG_FLOOR)
}

/// `l_rec + lambda_adv · l_adv_g`.
pub fn total_loss<T: Scalar>(tape: &mut Tape<T>, l_rec: Var, l_adv_g: Var, lambda_adv: f64) -> Result<Var> {
    let weighted = tape.scale(l_adv_g, lambda_adv)?;
    tape.add(l_rec, weighted)
}

/// Pixel-weighted MSE over a whole split, independent of batch boundaries.
#[derive(Clone, Debug, Default)]
pub struct EpochMetric {
    sum: f64,
    count: u64,
}

impl EpochMetric {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<T: Scalar>(&mut self, output: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
        if output.shape() != target.shape() {
            return Err(Error::dim(
                "epoch_metric",
                format!("output {:?} vs target {:?}", output.shape(), target.shape()),
            ));
        }
        for (&o, &t) in output.data().iter().zip(target.data()) {
            let d = o.as_f64() - t.as_f64();
            self.sum += d * d;
        }
        self.count += output.numel() as u64;
        Ok(())
    }

    pub fn value(&self) -> Result<f64> {
        if self.count == 0 {
            return Err(Error::Contract("epoch metric over an empty split".into()));
        }
        Ok(self.sum / self.count as f64)
    }
}
