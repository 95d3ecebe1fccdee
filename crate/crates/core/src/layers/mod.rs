//! Parameter containers, initialization, batch normalization and Adam.

mod adam;
mod norm;
mod params;

pub use adam::{AdamState, BETA1, BETA2, EPSILON};
pub use norm::{batch_norm, Mode, BN_EPS, BN_MOMENTUM};
pub use params::{init_params, Bound, Init, ParamDecl, ParamSet};
