//! Network definitions: degradation encoder, image encoder, modulated
//! reconstructor, the stand-in SR model and the frozen reference encoder.

mod blocks;
mod e_deg;
mod e_img;
mod lrn;
mod reconstructor;
mod reference;
mod sr;

pub use blocks::ResBlock;
pub use e_deg::{DegradationEncoder, DegradationEncoderConfig};
pub use e_img::{ImageEncoder, ImageEncoderConfig};
pub use lrn::{Lrn, LrnConfig};
pub use reconstructor::{Reconstructor, ReconstructorConfig};
pub use reference::{ClipRn50, RandomConvEncoder, ReferenceConfig, ReferenceEncoder, ReferenceMode};
pub use sr::{SrConfig, SrModel};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

/// Name prefix of a model's input convolution.
pub const HEAD_PREFIX: &str = "head.";

fn block_index(name: &str) -> Option<usize> {
    name.strip_prefix("blocks.")?.split('.').next()?.parse().ok()
}

/// Number of residual blocks of a model built with the `blocks.<i>` naming.
pub fn num_blocks(store: &ParamStore) -> usize {
    store
        .params()
        .iter()
        .filter_map(|p| block_index(p.name()))
        .max()
        .map_or(0, |m| m + 1)
}

/// Freezes the input convolution and the first `⌊fraction·blocks⌋` residual
/// blocks. Returns the number of frozen scalar parameters.
pub fn freeze_shallow(store: &ParamStore, fraction: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Invalid(format!("freeze fraction {fraction} outside [0, 1]")));
    }
    let blocks = num_blocks(store);
    if blocks == 0 {
        return Err(Error::Invalid("model has no residual block structure".into()));
    }
    let cut = (fraction * blocks as f64).floor() as usize;
    let mut frozen = 0;
    for p in store.params() {
        let shallow = p.name().starts_with(HEAD_PREFIX) || block_index(p.name()).is_some_and(|i| i < cut);
        if shallow {
            p.set_trainable(false);
            frozen += p.numel();
        }
    }
    Ok(frozen)
}

fn check_scale(scale: usize, allowed: &[usize]) -> Result<()> {
    if allowed.contains(&scale) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("scale {scale} not in {allowed:?}")))
    }
}

fn check_nonzero(what: &str, v: usize) -> Result<()> {
    if v == 0 {
        Err(Error::Config(format!("{what} must be >= 1")))
    } else {
        Ok(())
    }
}
