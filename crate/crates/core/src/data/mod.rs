//! Image ingestion, splitting, batching, masking and synthetic fixtures.

mod batch;
mod dataset;
mod mask;
mod synth;

pub use batch::{batch_plan, batches, split, split_indices, steps_per_epoch, with_prefetch, MAX_PREFETCH};
pub use dataset::{
    decode_png, list_pngs, load_dataset, prepare_image, quantize, read_rgb8, rgb8_to_tensor, save_png,
    tensor_to_rgb8, Dataset,
};
pub use mask::{apply_mask, make_mask, mask_area, MaskKind, MaskSpec};
pub use synth::{synthetic_dataset, synthetic_image};
