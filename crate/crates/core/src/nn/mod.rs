//! Minimal layer toolkit on top of candle's reverse-mode autograd.

mod checkpoint;
pub mod gradcheck;
mod layers;
mod optim;
mod params;

pub use checkpoint::Checkpoint;
pub use layers::{
    conv2d_same, im2col, leaky_relu, pixel_shuffle, BicubicUpsample, Conv2d, Linear, ModulatedConv2d,
};
pub use optim::{clip_grad_norm, cosine_lr, Adam, AdamConfig, Schedule};
pub use params::{Init, Param, ParamBuilder, ParamStore};
