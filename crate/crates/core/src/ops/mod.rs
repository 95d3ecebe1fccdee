//! Numeric kernels behind the differentiable tape operations.

pub(crate) mod activation;
pub mod conv;
pub(crate) mod linear;
pub(crate) mod norm;
pub(crate) mod pool;

pub use conv::Padding;
