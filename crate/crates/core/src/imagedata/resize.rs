use super::ImageTensor;
use crate::error::{Error, Result};

const CUBIC_A: f64 = -0.5;

fn cubic(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        ((CUBIC_A + 2.0) * x - (CUBIC_A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        CUBIC_A * (((x - 5.0) * x + 8.0) * x - 4.0)
    } else {
        0.0
    }
}

/// Dense `out_len × in_len` bicubic resampling matrix (row-major).
///
/// Pixel centers are aligned (`src = (dst + 0.5)·in/out − 0.5`), borders are
/// replicated, every row sums to one, and the kernel is stretched when
/// downscaling so the result is antialiased.
pub fn resize_matrix(in_len: usize, out_len: usize) -> Vec<f64> {
    let mut m = vec![0.0; out_len * in_len];
    let scale = out_len as f64 / in_len as f64;
    let kscale = scale.min(1.0);
    let support = 2.0 / kscale;
    for i in 0..out_len {
        let center = (i as f64 + 0.5) / scale - 0.5;
        let lo = (center - support).floor() as isize;
        let hi = (center + support).ceil() as isize;
        let row = &mut m[i * in_len..(i + 1) * in_len];
        let mut total = 0.0;
        for j in lo..=hi {
            let w = cubic((center - j as f64) * kscale);
            if w == 0.0 {
                continue;
            }
            let src = j.clamp(0, in_len as isize - 1) as usize;
            row[src] += w;
            total += w;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    m
}

/// Bicubic resize (Catmull-Rom kernel, antialiased when shrinking); output
/// values are clamped to `[0, 1]`.
pub fn bicubic_resize(img: &ImageTensor, target_h: usize, target_w: usize) -> Result<ImageTensor> {
    if target_h == 0 || target_w == 0 {
        return Err(Error::Invalid(format!(
            "resize target must be >= 1, got {target_h}x{target_w}"
        )));
    }
    let (c, h, w) = img.shape();
    if (h, w) == (target_h, target_w) {
        return Ok(img.clone());
    }
    let mh = resize_matrix(h, target_h);
    let mw = resize_matrix(w, target_w);
    let mut out = Vec::with_capacity(c * target_h * target_w);
    let mut tmp = vec![0.0f64; h * target_w];
    for ch in 0..c {
        let src = img.channel(ch);
        // Rows first: h × target_w.
        for y in 0..h {
            let srow = &src[y * w..(y + 1) * w];
            for x in 0..target_w {
                let wrow = &mw[x * w..(x + 1) * w];
                tmp[y * target_w + x] = wrow
                    .iter()
                    .zip(srow)
                    .filter(|(k, _)| **k != 0.0)
                    .map(|(k, &v)| k * v as f64)
                    .sum();
            }
        }
        for y in 0..target_h {
            let hrow = &mh[y * h..(y + 1) * h];
            for x in 0..target_w {
                let mut acc = 0.0;
                for (sy, k) in hrow.iter().enumerate() {
                    if *k != 0.0 {
                        acc += k * tmp[sy * target_w + x];
                    }
                }
                out.push(acc as f32);
            }
        }
    }
    ImageTensor::new(c, target_h, target_w, out)
}
