//! Context-encoder GAN for image inpainting, built on a small tape-based
//! reverse-mode autodiff engine.
//!
//! The generator is a convolutional autoencoder that fills an occluded square
//! from its surroundings; the discriminator scores whole images. Training
//! alternates one discriminator update and one generator update per batch.

pub mod data;
pub mod error;
mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod ops;
pub mod seed;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tape::{Tape, Var};
pub use tensor::{Scalar, Tensor};
