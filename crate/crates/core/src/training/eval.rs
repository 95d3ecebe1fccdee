use serde_json::{json, Value};

use crate::data::{apply_mask, make_mask, Dataset, MaskSpec};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::Tensor;

use super::trainer::generator_input;

/// Reconstruction quality over a split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    pub mse_full: f64,
    /// MSE restricted to occluded pixels; 0 when nothing is occluded.
    pub mse_masked_region: f64,
    /// `10·log10(1 / mse_full)`; infinite for a perfect reconstruction.
    pub psnr: f64,
    /// Masked-region MSE of leaving the fill value in place.
    pub baseline_mse_masked_region: f64,
}

impl Metrics {
    pub fn to_json(&self) -> Value {
        let psnr = if self.psnr.is_infinite() { json!("inf") } else { json!(self.psnr) };
        json!({
            "mse_full": self.mse_full,
            "mse_masked_region": self.mse_masked_region,
            "psnr": psnr,
            "baseline_mse_masked_region": self.baseline_mse_masked_region,
        })
    }

    /// `key=value` lines in a fixed order.
    pub fn to_lines(&self) -> String {
        format!(
            "mse_full={}\nmse_masked_region={}\npsnr={}\nbaseline_mse_masked_region={}\n",
            self.mse_full,
            self.mse_masked_region,
            if self.psnr.is_infinite() { "inf".to_string() } else { self.psnr.to_string() },
            self.baseline_mse_masked_region
        )
    }
}

pub fn psnr(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Evaluate an arbitrary inpainter. `inpaint` receives each masked batch
/// `[B, 3, H, W]` and the index of its first image in `split`, and returns
/// reconstructions of the same shape.
pub fn evaluate_with(
    split: &Dataset,
    mask: &MaskSpec,
    batch_size: usize,
    mut inpaint: impl FnMut(&Tensor<f32>, &Tensor<f32>, usize) -> Result<Tensor<f32>>,
) -> Result<Metrics> {
    let (h, w) = split.image_dims().ok_or_else(|| Error::Contract("evaluation on an empty split".into()))?;
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    let map = make_mask::<f32>(mask, h, w)?;
    let occluded: Vec<bool> = map.data().iter().map(|&m| m > 0.0).collect();
    let fill = mask.fill;
    let (mut full, mut region, mut baseline) = (0f64, 0f64, 0f64);
    let (mut n_full, mut n_region) = (0u64, 0u64);
    let plane = h * w;
    let indices: Vec<usize> = (0..split.len()).collect();
    for (b, chunk) in indices.chunks(batch_size).enumerate() {
        let truth = split.batch(chunk)?;
        let masked = apply_mask(&truth, &map, fill)?;
        let out = inpaint(&masked, &map, b * batch_size)?;
        if out.shape() != truth.shape() {
            return Err(Error::dim(
                "evaluate",
                format!("inpainter returned {:?} for input {:?}", out.shape(), truth.shape()),
            ));
        }
        for (i, (&o, &t)) in out.data().iter().zip(truth.data()).enumerate() {
            let d = o as f64 - t as f64;
            full += d * d;
            n_full += 1;
            if occluded[i % plane] {
                region += d * d;
                let db = fill - t as f64;
                baseline += db * db;
                n_region += 1;
            }
        }
    }
    let mse_full = full / n_full as f64;
    let per_region = |s: f64| if n_region == 0 { 0.0 } else { s / n_region as f64 };
    Ok(Metrics {
        mse_full,
        mse_masked_region: per_region(region),
        psnr: psnr(mse_full),
        baseline_mse_masked_region: per_region(baseline),
    })
}

/// Evaluate a generator in inference mode.
pub fn evaluate(generator: &Network<f32>, split: &Dataset, mask: &MaskSpec, batch_size: usize) -> Result<Metrics> {
    evaluate_with(split, mask, batch_size, |_, map, start| {
        let end = (start + batch_size).min(split.len());
        let truth = split.batch(&(start..end).collect::<Vec<_>>())?;
        let input = generator_input(generator.spec(), &truth, map, mask.fill)?;
        generator.infer(&input)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic_dataset;
    use crate::model::{build_generator, ModelSpec};

    #[test]
    fn perfect_inpainter_has_infinite_psnr() {
        let ds = synthetic_dataset(5, 32, 2).unwrap();
        let m = evaluate_with(&ds, &MaskSpec::default(), 2, |masked, _, start| {
            let n = masked.shape()[0];
            ds.batch(&(start..start + n).collect::<Vec<_>>())
        })
        .unwrap();
        assert_eq!(m.mse_full, 0.0);
        assert_eq!(m.mse_masked_region, 0.0);
        assert!(m.psnr.is_infinite());
        assert!(m.baseline_mse_masked_region > 0.0);
        assert_eq!(m.to_json()["psnr"], "inf");
        let keys: Vec<_> = m.to_json().as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 4);
    }

    #[test]
    fn do_nothing_inpainter_matches_baseline() {
        let ds = synthetic_dataset(3, 32, 4).unwrap();
        let m = evaluate_with(&ds, &MaskSpec::default(), 3, |masked, _, _| Ok(masked.clone())).unwrap();
        assert!((m.mse_masked_region - m.baseline_mse_masked_region).abs() < 1e-12);
        assert!((m.psnr - 10.0 * (1.0 / m.mse_full).log10()).abs() < 1e-9);
    }

    #[test]
    fn batch_size_does_not_change_metrics() {
        let ds = synthetic_dataset(7, 32, 5).unwrap();
        let spec = ModelSpec { image_size: 32, channels: [2, 2, 4, 4, 4, 4], ..ModelSpec::default() };
        let g = build_generator(&spec, 1).unwrap();
        let a = evaluate(&g, &ds, &MaskSpec::default(), 1).unwrap();
        let b = evaluate(&g, &ds, &MaskSpec::default(), 7).unwrap();
        let c = evaluate(&g, &ds, &MaskSpec::default(), 3).unwrap();
        for other in [b, c] {
            assert!((a.mse_full - other.mse_full).abs() < 1e-6);
            assert!((a.mse_masked_region - other.mse_masked_region).abs() < 1e-6);
            assert!((a.psnr - other.psnr).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_split_is_a_contract_error() {
        let empty = Dataset::new(Vec::new(), Vec::new()).unwrap();
        assert!(matches!(evaluate_with(&empty, &MaskSpec::default(), 1, |m, _, _| Ok(m.clone())), Err(Error::Contract(_))));
    }
}
