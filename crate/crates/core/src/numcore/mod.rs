//! Numeric primitives shared by every other module.

pub mod adam;
pub mod checkpoint;
pub mod mlp;
pub mod rng;

pub use mlp::{
    backward_batch, clip_global_norm, clip_global_norm_in_place, forward_batch, mlp_backward,
    mlp_forward, Activation, ForwardCache, LayerSlot, MlpParams, MlpSpec,
};
pub use adam::Adam;
pub use rng::RngStream;
