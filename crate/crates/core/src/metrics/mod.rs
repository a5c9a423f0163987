//! PSNR and SSIM on luma, the perceptual distance shared by losses and the
//! quality indicator, and per-directory metric reports.

mod perceptual;
mod report;

pub use perceptual::{
    AlexLpips, Perceptual, PerceptualBackend, PerceptualConfig, RandomFeatureDistance, FALLBACK_NAME, LPIPS_NAME,
};
pub use report::{MetricReport, MetricRow};

use crate::error::{Error, Result};
use crate::imagedata::{rgb_to_y, ImageTensor};

/// Returned for identical images.
pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn luma(img: &ImageTensor) -> Result<Vec<f64>> {
    let y = match img.channels() {
        1 => img.clone(),
        3 => rgb_to_y(img)?,
        c => return Err(Error::Shape(format!("luma of a {c}-channel image"))),
    };
    Ok(y.data().iter().map(|&v| v as f64).collect())
}

/// PSNR in dB on the luma channel for `[0, 1]` data, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (ya, yb) = (luma(a)?, luma(b)?);
    let mse = ya.iter().zip(&yb).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / ya.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of an `h×w` plane.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = (0..k).map(|i| g[i] * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..k).map(|i| g[i] * rows[(yo + i) * ow + xo]).sum();
        }
    }
    out
}

/// Mean SSIM over the valid region, 11×11 Gaussian window (σ = 1.5), on luma.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (h, w) = (a.height(), a.width());
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let (x, y) = (luma(a)?, luma(b)?);
    let g = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_x = filter_valid(&x, h, w, &g);
    let mu_y = filter_valid(&y, h, w, &g);
    let xx = filter_valid(&prod(&x, &x), h, w, &g);
    let yy = filter_valid(&prod(&y, &y), h, w, &g);
    let xy = filter_valid(&prod(&x, &y), h, w, &g);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cxy = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}
