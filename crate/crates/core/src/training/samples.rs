use std::path::Path;

use image::{imageops, RgbImage};

use crate::data::{apply_mask, make_mask, save_png, tensor_to_rgb8, MaskSpec};
use crate::error::{Error, Result};
use crate::model::Network;
use crate::tensor::Tensor;

use super::trainer::generator_input;

/// One row per image: masked input, generator output, ground truth.
pub fn sample_grid(generator: &Network<f32>, images: &[Tensor<f32>], mask: &MaskSpec) -> Result<RgbImage> {
    if images.is_empty() {
        return Err(Error::Contract("sample grid needs at least one image".into()));
    }
    let truth = Tensor::stack(&images.iter().collect::<Vec<_>>())?;
    let (n, _, h, w) = truth.dims4()?;
    let map = make_mask::<f32>(mask, h, w)?;
    let masked = apply_mask(&truth, &map, mask.fill)?;
    let output = generator.infer(&generator_input(generator.spec(), &truth, &map, mask.fill)?)?;
    let mut grid = RgbImage::new(3 * w as u32, (n * h) as u32);
    for i in 0..n {
        for (col, src) in [&masked, &output, &truth].into_iter().enumerate() {
            let tile = tensor_to_rgb8(&src.narrow_batch(i, 1)?.reshape([3, h, w])?)?;
            imageops::replace(&mut grid, &tile, (col * w) as i64, (i * h) as i64);
        }
    }
    Ok(grid)
}

pub fn emit_samples(generator: &Network<f32>, images: &[Tensor<f32>], mask: &MaskSpec, path: &Path) -> Result<()> {
    save_png(path, &sample_grid(generator, images, mask)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_rgb8, rgb8_to_tensor, synthetic_dataset};
    use crate::model::{build_generator, ModelSpec};

    #[test]
    fn grid_layout_and_columns() {
        let ds = synthetic_dataset(4, 32, 8).unwrap();
        let spec = ModelSpec { image_size: 32, channels: [2, 2, 4, 4, 4, 4], ..ModelSpec::default() };
        let g = build_generator(&spec, 2).unwrap();
        let mask = MaskSpec::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.png");
        emit_samples(&g, ds.images(), &mask, &path).unwrap();
        let grid = read_rgb8(&path).unwrap();
        assert_eq!(grid.dimensions(), (96, 128));

        let batch = ds.to_batch().unwrap();
        let map = make_mask::<f32>(&mask, 32, 32).unwrap();
        let direct = g.infer(&generator_input(&spec, &batch, &map, 0.0).unwrap()).unwrap();
        for i in 0..4 {
            let row = |col: u32| {
                rgb8_to_tensor(&imageops::crop_imm(&grid, col * 32, i as u32 * 32, 32, 32).to_image())
            };
            let truth = &ds.images()[i];
            for (a, b) in row(2).data().iter().zip(truth.data()) {
                assert!((a - b).abs() <= 1.0 / 255.0);
            }
            let out = direct.narrow_batch(i, 1).unwrap();
            for (a, b) in row(1).data().iter().zip(out.data()) {
                assert!((a - b).abs() <= 1.0 / 255.0);
            }
        }
        assert!(emit_samples(&g, &[], &mask, &path).is_err());
    }
}
