//! Image tensors, file I/O, luma conversion, bicubic resampling, patch
//! cropping and the Haar high-frequency weight map.

mod io;
mod resize;
mod wavelet;

pub use io::{list_images, load_image, save_image};
pub(crate) use io::{from_dynamic as io_from_dynamic, to_dynamic as io_to_dynamic};
pub use resize::{bicubic_resize, resize_matrix};
pub use wavelet::{hf_weight_map, WeightMap};

use candle_core::{DType, Device, Tensor};
use rand::Rng;

use crate::error::{Error, Result};

/// Luma weights of the full-range BT.601 transform.
pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// A `C×H×W` image with channel-major data in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    /// Builds an image, clamping every value into `[0, 1]`.
    ///
    /// Non-finite values and zero-sized shapes are rejected.
    pub fn new(channels: usize, height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "expected {} values for {channels}x{height}x{width}, got {}",
                channels * height * width,
                data.len()
            )));
        }
        for v in data.iter_mut() {
            if !v.is_finite() {
                return Err(Error::Invalid("non-finite pixel value".into()));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    /// Builds an image from a per-pixel function `f(c, y, x)`.
    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        f: impl Fn(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    /// Applies `f` to every value; the result is clamped back into `[0, 1]`.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(
            self.channels,
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// `alpha·self + (1 − alpha)·other`.
    pub fn lerp(&self, other: &ImageTensor, alpha: f32) -> Result<Self> {
        self.ensure_same_shape(other)?;
        Self::new(
            self.channels,
            self.height,
            self.width,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| alpha * a + (1.0 - alpha) * b)
                .collect(),
        )
    }

    pub fn ensure_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f32 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    /// `(1, C, H, W)` tensor of the requested dtype.
    pub fn to_tensor(&self, dtype: DType) -> Result<Tensor> {
        let t = Tensor::from_slice(
            &self.data,
            (1, self.channels, self.height, self.width),
            &Device::Cpu,
        )?;
        Ok(t.to_dtype(dtype)?)
    }

    /// Accepts `(C, H, W)` or `(1, C, H, W)`; values are clamped into `[0, 1]`.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let t = match t.rank() {
            3 => t.clone(),
            4 if t.dim(0)? == 1 => t.squeeze(0)?,
            _ => {
                return Err(Error::Shape(format!(
                    "expected a single image tensor, got {:?}",
                    t.dims()
                )))
            }
        };
        let (c, h, w) = t.dims3()?;
        let data = t
            .to_dtype(DType::F32)?
            .flatten_all()?
            .to_vec1::<f32>()?;
        Self::new(c, h, w, data)
    }
}

/// Stacks same-shaped images into a `(B, C, H, W)` tensor.
pub fn stack_images(images: &[ImageTensor], dtype: DType) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Empty("cannot stack an empty image list".into()))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        first.ensure_same_shape(img)?;
        data.extend_from_slice(&img.data);
    }
    let (c, h, w) = first.shape();
    let t = Tensor::from_vec(data, (images.len(), c, h, w), &Device::Cpu)?;
    Ok(t.to_dtype(dtype)?)
}

/// Splits a `(B, C, H, W)` tensor into clamped images.
pub fn unstack_images(t: &Tensor) -> Result<Vec<ImageTensor>> {
    let b = t.dim(0)?;
    (0..b)
        .map(|i| ImageTensor::from_tensor(&t.get(i)?))
        .collect()
}

/// Luma channel through the full-range BT.601 transform.
pub fn rgb_to_y(img: &ImageTensor) -> Result<ImageTensor> {
    if img.channels != 3 {
        return Err(Error::Shape(format!(
            "luma conversion needs 3 channels, got {}",
            img.channels
        )));
    }
    let n = img.height * img.width;
    let (r, g, b) = (img.channel(0), img.channel(1), img.channel(2));
    let y = (0..n)
        .map(|i| LUMA_WEIGHTS[0] * r[i] + LUMA_WEIGHTS[1] * g[i] + LUMA_WEIGHTS[2] * b[i])
        .collect();
    ImageTensor::new(1, img.height, img.width, y)
}

/// Exact `size×size` sub-window starting at `(top, left)`.
pub fn crop_patch(img: &ImageTensor, top: usize, left: usize, size: usize) -> Result<ImageTensor> {
    crop_rect(img, top, left, size, size)
}

pub fn crop_rect(
    img: &ImageTensor,
    top: usize,
    left: usize,
    height: usize,
    width: usize,
) -> Result<ImageTensor> {
    if height == 0 || width == 0 || top + height > img.height || left + width > img.width {
        return Err(Error::Invalid(format!(
            "crop {height}x{width} at ({top},{left}) does not fit a {}x{} image",
            img.height, img.width
        )));
    }
    let mut data = Vec::with_capacity(img.channels * height * width);
    for c in 0..img.channels {
        for y in top..top + height {
            let row = (c * img.height + y) * img.width;
            data.extend_from_slice(&img.data[row + left..row + left + width]);
        }
    }
    ImageTensor::new(img.channels, height, width, data)
}

/// Crops an LR patch and the HR patch covering the same area.
///
/// HR coordinates are the LR ones multiplied by `scale`.
pub fn crop_aligned(
    lr: &ImageTensor,
    hr: &ImageTensor,
    top: usize,
    left: usize,
    lr_size: usize,
    scale: usize,
) -> Result<(ImageTensor, ImageTensor)> {
    check_pair_scale(lr, hr, scale)?;
    let lr_patch = crop_patch(lr, top, left, lr_size)?;
    let hr_patch = crop_patch(hr, top * scale, left * scale, lr_size * scale)?;
    Ok((lr_patch, hr_patch))
}

/// Aligned crop at a uniformly drawn LR position.
pub fn random_crop_aligned<R: Rng + ?Sized>(
    rng: &mut R,
    lr: &ImageTensor,
    hr: &ImageTensor,
    lr_size: usize,
    scale: usize,
) -> Result<(ImageTensor, ImageTensor)> {
    if lr_size > lr.height || lr_size > lr.width {
        return Err(Error::Invalid(format!(
            "patch {lr_size} larger than LR image {}x{}",
            lr.height, lr.width
        )));
    }
    let top = rng.random_range(0..=lr.height - lr_size);
    let left = rng.random_range(0..=lr.width - lr_size);
    crop_aligned(lr, hr, top, left, lr_size, scale)
}

pub fn random_crop<R: Rng + ?Sized>(rng: &mut R, img: &ImageTensor, size: usize) -> Result<ImageTensor> {
    if size > img.height || size > img.width {
        return Err(Error::Invalid(format!(
            "patch {size} larger than image {}x{}",
            img.height, img.width
        )));
    }
    let top = rng.random_range(0..=img.height - size);
    let left = rng.random_range(0..=img.width - size);
    crop_patch(img, top, left, size)
}

pub fn check_pair_scale(lr: &ImageTensor, hr: &ImageTensor, scale: usize) -> Result<()> {
    if lr.channels != hr.channels || lr.height * scale != hr.height || lr.width * scale != hr.width {
        return Err(Error::Shape(format!(
            "HR {:?} is not {scale}x LR {:?}",
            hr.shape(),
            lr.shape()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(c: usize, h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(c, h, w, |ch, y, x| ((ch * h + y) * w + x) as f32 / (c * h * w) as f32)
            .unwrap()
    }

    #[test]
    fn construction_clamps_and_rejects() {
        let img = ImageTensor::new(1, 1, 2, vec![-0.5, 1.5]).unwrap();
        assert_eq!(img.data(), &[0.0, 1.0]);
        assert!(ImageTensor::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(ImageTensor::new(1, 0, 1, vec![]).is_err());
        assert!(ImageTensor::new(3, 2, 2, vec![0.0; 11]).is_err());
    }

    #[test]
    fn luma_of_primaries() {
        let white = ImageTensor::filled(3, 2, 2, 1.0).unwrap();
        assert!((rgb_to_y(&white).unwrap().get(0, 0, 0) - 1.0).abs() < 1e-6);
        let black = ImageTensor::filled(3, 2, 2, 0.0).unwrap();
        assert_eq!(rgb_to_y(&black).unwrap().get(0, 1, 1), 0.0);
        let red = ImageTensor::from_fn(3, 1, 1, |c, _, _| if c == 0 { 1.0 } else { 0.0 }).unwrap();
        assert!((rgb_to_y(&red).unwrap().get(0, 0, 0) - 0.299).abs() < 1e-7);
        assert!(rgb_to_y(&ImageTensor::filled(1, 2, 2, 0.3).unwrap()).is_err());
    }

    #[test]
    fn crop_full_and_corner() {
        let img = ramp(3, 5, 7);
        assert_eq!(crop_rect(&img, 0, 0, 5, 7).unwrap(), img);
        let px = crop_patch(&img, 0, 0, 1).unwrap();
        for c in 0..3 {
            assert_eq!(px.get(c, 0, 0), img.get(c, 0, 0));
        }
        assert!(crop_patch(&img, 3, 3, 3).is_err());
    }

    #[test]
    fn aligned_crop_scales_coordinates() {
        let lr = ramp(3, 32, 32);
        let hr = ramp(3, 128, 128);
        let (lp, hp) = crop_aligned(&lr, &hr, 3, 5, 16, 4).unwrap();
        assert_eq!(lp.shape(), (3, 16, 16));
        assert_eq!(hp.shape(), (3, 64, 64));
        assert_eq!(lp, crop_patch(&lr, 3, 5, 16).unwrap());
        assert_eq!(hp, crop_patch(&hr, 12, 20, 64).unwrap());
        assert_eq!(hp.get(1, 0, 0), hr.get(1, 12, 20));
    }

    #[test]
    fn tensor_round_trip() {
        let img = ramp(3, 4, 5);
        let t = img.to_tensor(DType::F64).unwrap();
        assert_eq!(t.dims(), &[1, 3, 4, 5]);
        assert_eq!(ImageTensor::from_tensor(&t).unwrap(), img);
        let batch = stack_images(&[img.clone(), img.clone()], DType::F32).unwrap();
        let back = unstack_images(&batch).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1], img);
    }
}
