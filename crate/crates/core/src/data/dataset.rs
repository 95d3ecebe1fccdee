use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{DynamicImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Images of identical shape `[3, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Vec<Tensor<f32>>,
    paths: Vec<PathBuf>,
    /// Files in the source directory that could not be decoded.
    pub skipped: usize,
}

impl Dataset {
    /// `paths` may be empty for generated data; otherwise one per image.
    pub fn new(images: Vec<Tensor<f32>>, paths: Vec<PathBuf>) -> Result<Self> {
        if !paths.is_empty() && paths.len() != images.len() {
            return Err(Error::Contract(format!("{} paths for {} images", paths.len(), images.len())));
        }
        if let Some(first) = images.first() {
            let shape = first.shape();
            if shape.len() != 3 || shape[0] != 3 {
                return Err(Error::dim("dataset", format!("images must be [3, H, W], got {shape:?}")));
            }
            for (i, img) in images.iter().enumerate() {
                if img.shape() != shape {
                    return Err(Error::dim(
                        "dataset",
                        format!("image {i} has shape {:?}, expected {shape:?}", img.shape()),
                    ));
                }
                if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::Contract(format!("image {i} has values outside [0, 1]")));
                }
            }
        }
        Ok(Dataset { images, paths, skipped: 0 })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn images(&self) -> &[Tensor<f32>] {
        &self.images
    }

    pub fn paths(&self) -> &[PathBuf] {
        &self.paths
    }

    /// `(H, W)` shared by all images.
    pub fn image_dims(&self) -> Option<(usize, usize)> {
        self.images.first().map(|t| (t.shape()[1], t.shape()[2]))
    }

    /// Images at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            paths: if self.paths.is_empty() { Vec::new() } else { indices.iter().map(|&i| self.paths[i].clone()).collect() },
            skipped: 0,
        }
    }

    /// Stack the images at `indices` into a `[B, 3, H, W]` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        let items: Vec<&Tensor<f32>> = indices.iter().map(|&i| &self.images[i]).collect();
        Tensor::stack(&items)
    }

    /// The whole dataset as one `[N, 3, H, W]` tensor.
    pub fn to_batch(&self) -> Result<Tensor<f32>> {
        let all: Vec<usize> = (0..self.len()).collect();
        self.batch(&all)
    }
}

/// PNG files directly inside `dir`, ordered by file-name bytes.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .filter(|p| p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    files.sort_by(|a, b| a.file_name().unwrap_or_default().as_encoded_bytes().cmp(b.file_name().unwrap_or_default().as_encoded_bytes()));
    Ok(files)
}

pub fn decode_png(path: &Path) -> Result<DynamicImage> {
    let reader = BufReader::new(fs::File::open(path)?);
    Ok(image::load(reader, ImageFormat::Png)?)
}

/// Decode as 8-bit RGB: alpha dropped, grayscale replicated.
pub fn read_rgb8(path: &Path) -> Result<RgbImage> {
    Ok(decode_png(path)?.to_rgb8())
}

pub fn rgb8_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn([3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f32 / 255.0
    })
}

/// Quantize a `[3, H, W]` tensor to 8-bit RGB after clamping to `[0, 1]`.
pub fn tensor_to_rgb8(t: &Tensor<f32>) -> Result<RgbImage> {
    let &[3, h, w] = t.shape() else {
        return Err(Error::dim("tensor_to_rgb8", format!("expected [3, H, W], got {:?}", t.shape())));
    };
    let d = t.data();
    let mut raw = vec![0u8; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            raw[p * 3 + c] = quantize(d[c * h * w + p]);
        }
    }
    RgbImage::from_raw(w as u32, h as u32, raw)
        .ok_or_else(|| Error::Contract("pixel buffer size mismatch".into()))
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Center-crop to a square and resize (bilinear) to `size × size`.
pub fn prepare_image(img: &DynamicImage, size: usize) -> Tensor<f32> {
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let side = w.min(h);
    let cropped = imageops::crop_imm(&rgb, (w - side) / 2, (h - side) / 2, side, side).to_image();
    let sized = if side as usize == size {
        cropped
    } else {
        imageops::resize(&cropped, size as u32, size as u32, FilterType::Triangle)
    };
    rgb8_to_tensor(&sized)
}

/// Load every decodable PNG in `dir` as a `size × size` RGB tensor.
pub fn load_dataset(dir: &Path, size: usize) -> Result<Dataset> {
    if size == 0 {
        return Err(Error::Config("image size must be positive".into()));
    }
    let mut images = Vec::new();
    let mut paths = Vec::new();
    let mut skipped = 0;
    for path in list_pngs(dir)? {
        match decode_png(&path) {
            Ok(img) => {
                images.push(prepare_image(&img, size));
                paths.push(path);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped += 1;
            }
        }
    }
    if images.is_empty() {
        return Err(Error::EmptyDataset(dir.to_path_buf()));
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} undecodable file(s) in {}", dir.display());
    }
    let mut ds = Dataset::new(images, paths)?;
    ds.skipped = skipped;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgba, RgbaImage};

    #[test]
    fn loads_sorted_and_normalized() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["b.png", "a.PNG", "c.png"] {
            let img = RgbImage::from_pixel(40, 30, image::Rgb([255, 255, 255]));
            img.save(dir.path().join(name)).unwrap();
        }
        fs::write(dir.path().join("broken.png"), b"not a png").unwrap();
        fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();
        let ds = load_dataset(dir.path(), 32).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.skipped, 1);
        let names: Vec<_> = ds.paths().iter().map(|p| p.file_name().unwrap().to_str().unwrap()).collect();
        assert_eq!(names, vec!["a.PNG", "b.png", "c.png"]);
        for img in ds.images() {
            assert_eq!(img.shape(), &[3, 32, 32]);
            assert!(img.data().iter().all(|&v| (v - 1.0).abs() <= 1.0 / 255.0));
        }
        assert_eq!(load_dataset(dir.path(), 32).unwrap(), ds);
    }

    #[test]
    fn grayscale_and_alpha_become_rgb() {
        let dir = tempfile::tempdir().unwrap();
        GrayImage::from_pixel(8, 8, Luma([51])).save(dir.path().join("g.png")).unwrap();
        RgbaImage::from_pixel(8, 8, Rgba([255, 0, 102, 7])).save(dir.path().join("r.png")).unwrap();
        let ds = load_dataset(dir.path(), 8).unwrap();
        assert!(ds.images()[0].data().iter().all(|&v| (v - 0.2).abs() < 1e-6));
        let rgba = &ds.images()[1];
        assert_eq!(rgba.data()[0], 1.0);
        assert_eq!(rgba.data()[64], 0.0);
        assert!((rgba.data()[128] - 0.4).abs() < 1e-6);
    }

    #[test]
    fn empty_directory_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(dir.path(), 32), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn quantization_round_trip_within_one_level() {
        let t = Tensor::<f32>::from_fn([3, 5, 7], |i| ((i * 31 % 97) as f32) / 96.0);
        let back = rgb8_to_tensor(&tensor_to_rgb8(&t).unwrap());
        for (a, b) in t.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
    }
}
