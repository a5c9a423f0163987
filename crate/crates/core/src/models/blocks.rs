use candle_core::Tensor;

use crate::error::Result;
use crate::nn::{leaky_relu, Conv2d, ParamBuilder};

pub(crate) const SLOPE: f64 = 0.1;

/// `x + conv(act(conv(x)))` with 3×3 convolutions.
pub struct ResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl ResBlock {
    pub fn new(vb: &ParamBuilder, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(&vb.pp("conv1"), channels, channels, 3, 1)?,
            // Small second-conv init keeps deep stacks close to identity.
            conv2: Conv2d::with_gain(&vb.pp("conv2"), channels, channels, 3, 1, 0.1)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = leaky_relu(&self.conv1.forward(x)?, SLOPE)?;
        Ok((x + self.conv2.forward(&h)?)?)
    }
}
