use super::ImageTensor;
use crate::error::{Error, Result};

/// Per-pixel weights in `[0, 1]` highlighting high-frequency content.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl WeightMap {
    pub fn max(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Applies the map to every channel of `img` (`W ⊙ img`).
    pub fn apply(&self, img: &ImageTensor) -> Result<ImageTensor> {
        if (img.height(), img.width()) != (self.height, self.width) {
            return Err(Error::Shape(format!(
                "weight map {}x{} vs image {}x{}",
                self.height,
                self.width,
                img.height(),
                img.width()
            )));
        }
        let n = self.height * self.width;
        let data = img
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * self.data[i % n])
            .collect();
        ImageTensor::new(img.channels(), img.height(), img.width(), data)
    }
}

/// One-level Haar DWT high-frequency weight map.
///
/// For every 2×2 block the detail bands HL, LH and HH are summed in absolute
/// value over channels, the map is divided by its maximum and each block value
/// is copied back to its four pixels. Odd sizes are edge-padded first and the
/// padding is cropped afterwards. A constant image gives an all-zero map.
pub fn hf_weight_map(img: &ImageTensor) -> WeightMap {
    let (c, h, w) = img.shape();
    let (bh, bw) = (h.div_ceil(2), w.div_ceil(2));
    let mut blocks = vec![0.0f64; bh * bw];
    let at = |ch: usize, y: usize, x: usize| img.get(ch, y.min(h - 1), x.min(w - 1)) as f64;
    for ch in 0..c {
        for by in 0..bh {
            for bx in 0..bw {
                let (y, x) = (2 * by, 2 * bx);
                let a = at(ch, y, x);
                let b = at(ch, y, x + 1);
                let cc = at(ch, y + 1, x);
                let d = at(ch, y + 1, x + 1);
                let hl = (a - b + cc - d) / 2.0;
                let lh = (a + b - cc - d) / 2.0;
                let hh = (a - b - cc + d) / 2.0;
                blocks[by * bw + bx] += hl.abs() + lh.abs() + hh.abs();
            }
        }
    }
    let max = blocks.iter().copied().fold(0.0, f64::max);
    let mut data = vec![0.0f32; h * w];
    if max > 0.0 {
        for y in 0..h {
            for x in 0..w {
                data[y * w + x] = (blocks[(y / 2) * bw + x / 2] / max) as f32;
            }
        }
    }
    WeightMap {
        height: h,
        width: w,
        data,
    }
}
