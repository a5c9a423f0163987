use candle_core::{DType, Device, Tensor, D};

use super::params::{Init, Param, ParamBuilder};
use crate::error::{Error, Result};
use crate::imagedata::resize_matrix;

/// Zero-padded "same" patches: `(B, C, H, W)` → `(B, C·k·k, H·W)`.
///
/// Built from shifted views so both directions of autograd stay on cheap
/// copy/matmul kernels.
pub fn im2col(x: &Tensor, k: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if k == 1 {
        return Ok(x.reshape((b, c, h * w))?);
    }
    let pad = k / 2;
    let xp = x.pad_with_zeros(2, pad, pad)?.pad_with_zeros(3, pad, pad)?;
    let mut cols = Vec::with_capacity(k * k);
    for dy in 0..k {
        for dx in 0..k {
            cols.push(xp.narrow(2, dy, h)?.narrow(3, dx, w)?);
        }
    }
    Ok(Tensor::stack(&cols, 2)?.reshape((b, c * k * k, h * w))?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok((x.relu()? - (x.neg()?.relu()? * slope)?)?)
}

/// `(B, C·r², H, W)` → `(B, C, H·r, W·r)`.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    if c % (r * r) != 0 {
        return Err(Error::Shape(format!("{c} channels not divisible by {}", r * r)));
    }
    let oc = c / (r * r);
    Ok(x
        .reshape((b, oc, r, r, h, w))?
        .permute((0, 1, 4, 2, 5, 3))?
        .reshape((b, oc, h * r, w * r))?)
}

/// Square-kernel convolution with "same" padding on plain tensors.
///
/// Stride 1 goes through [`im2col`]; larger strides use candle's kernel.
pub fn conv2d_same(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, stride: usize) -> Result<Tensor> {
    let (b, _, h, w) = x.dims4()?;
    let (cout, _, k, _) = weight.dims4()?;
    let y = if stride == 1 {
        let cols = im2col(x, k)?;
        let wm = weight.reshape((1, cout, ()))?;
        wm.broadcast_matmul(&cols)?.reshape((b, cout, h, w))?
    } else {
        x.conv2d(weight, k / 2, stride, 1, 1)?
    };
    match bias {
        Some(bias) => Ok(y.broadcast_add(&bias.reshape((1, cout, 1, 1))?)?),
        None => Ok(y),
    }
}

/// Square-kernel convolution with "same" padding.
pub struct Conv2d {
    weight: Param,
    bias: Param,
    stride: usize,
}

impl Conv2d {
    pub fn new(vb: &ParamBuilder, cin: usize, cout: usize, kernel: usize, stride: usize) -> Result<Self> {
        Self::with_gain(vb, cin, cout, kernel, stride, 1.0)
    }

    pub fn with_gain(
        vb: &ParamBuilder,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        gain: f64,
    ) -> Result<Self> {
        let fan_in = cin * kernel * kernel;
        Ok(Self {
            weight: vb.param("weight", &[cout, cin, kernel, kernel], Init::Uniform { fan_in, gain })?,
            bias: vb.param("bias", &[cout], Init::Const(0.0))?,
            stride,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d_same(x, &self.weight.tensor(), Some(&self.bias.tensor()), self.stride)
    }

    pub fn params(&self) -> [&Param; 2] {
        [&self.weight, &self.bias]
    }
}

pub struct Linear {
    weight: Param,
    bias: Param,
}

impl Linear {
    pub fn new(vb: &ParamBuilder, din: usize, dout: usize) -> Result<Self> {
        Self::with_bias_init(vb, din, dout, 0.0)
    }

    pub fn with_bias_init(vb: &ParamBuilder, din: usize, dout: usize, bias: f64) -> Result<Self> {
        Ok(Self {
            weight: vb.param("weight", &[dout, din], Init::kaiming(din))?,
            bias: vb.param("bias", &[dout], Init::Const(bias))?,
        })
    }

    /// `(B, din)` → `(B, dout)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x
            .matmul(&self.weight.tensor().t()?)?
            .broadcast_add(&self.bias.tensor())?)
    }

    pub fn weight(&self) -> &Param {
        &self.weight
    }

    pub fn bias(&self) -> &Param {
        &self.bias
    }
}

/// Weight-modulated, demodulated 3×3 convolution driven by a per-sample style.
///
/// The affine style projection starts at bias 1 so an untrained layer behaves
/// like an ordinary convolution.
pub struct ModulatedConv2d {
    weight: Param,
    bias: Param,
    affine: Linear,
    cin: usize,
    cout: usize,
    kernel: usize,
    eps: f64,
}

impl ModulatedConv2d {
    pub const DEMOD_EPS: f64 = 1e-8;

    pub fn new(vb: &ParamBuilder, style_dim: usize, cin: usize, cout: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            weight: vb.param("weight", &[cout, cin, kernel, kernel], Init::kaiming(cin * kernel * kernel))?,
            bias: vb.param("bias", &[cout], Init::Const(0.0))?,
            affine: Linear::with_bias_init(&vb.pp("affine"), style_dim, cin, 1.0)?,
            cin,
            cout,
            kernel,
            eps: Self::DEMOD_EPS,
        })
    }

    /// `x: (B, cin, H, W)`, `style: (B, style_dim)`.
    pub fn forward(&self, x: &Tensor, style: &Tensor) -> Result<Tensor> {
        let (b, _, h, w) = x.dims4()?;
        let kk = self.kernel * self.kernel;
        let s = self.affine.forward(style)?.reshape((b, 1, self.cin, 1))?;
        let base = self.weight.tensor().reshape((1, self.cout, self.cin, kk))?;
        let wm = base.broadcast_mul(&s)?;
        let demod = (wm.sqr()?.sum_keepdim(D::Minus1)?.sum_keepdim(2)? + self.eps)?
            .sqrt()?
            .recip()?;
        let wm = wm.broadcast_mul(&demod)?.reshape((b, self.cout, self.cin * kk))?;
        let cols = im2col(x, self.kernel)?;
        let y = wm.matmul(&cols)?.reshape((b, self.cout, h, w))?;
        Ok(y.broadcast_add(&self.bias.tensor().reshape((1, self.cout, 1, 1))?)?)
    }
}

/// Fixed bicubic resampling expressed as two matrix products, so gradients
/// pass through to the input.
pub struct BicubicUpsample {
    rows: Tensor,
    cols_t: Tensor,
}

impl BicubicUpsample {
    pub fn new(in_h: usize, in_w: usize, out_h: usize, out_w: usize, dtype: DType) -> Result<Self> {
        let rows = Tensor::from_vec(resize_matrix(in_h, out_h), (out_h, in_h), &Device::Cpu)?.to_dtype(dtype)?;
        let cols = Tensor::from_vec(resize_matrix(in_w, out_w), (out_w, in_w), &Device::Cpu)?.to_dtype(dtype)?;
        Ok(Self {
            rows,
            cols_t: cols.t()?.contiguous()?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.cols_t)?;
        Ok(self.rows.broadcast_matmul(&y)?)
    }
}
