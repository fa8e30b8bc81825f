//! Hand-written reverse-mode kernels: parameters, MLPs, texture sampling.

pub mod gradcheck;
pub mod mlp;
pub mod params;
pub mod texture;

pub use mlp::{Activation, Mlp, MlpSpec, MlpTrace};
pub use params::{Adam, GradBuffer, GradSink, ParamId, ParamStore, StoreHeader};
pub use texture::{footprint, Footprint, TextureShape};
