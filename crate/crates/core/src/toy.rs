//! Procedural HR images with edges, gratings and texture, used as a stand-in
//! corpus for desk-scale runs, tests and benchmarks.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::degrade::{apply_recipe, derive_seed, DegradationRecipe, Stage};
use crate::error::{Error, Result};
use crate::imagedata::{save_image, ImageTensor};
use crate::par::{try_map_indexed, Exec};

enum Shape {
    Disc { cy: f32, cx: f32, r: f32 },
    Rect { y0: f32, x0: f32, y1: f32, x1: f32 },
    Stripe { ny: f32, nx: f32, off: f32, width: f32 },
}

impl Shape {
    fn contains(&self, y: f32, x: f32) -> bool {
        match *self {
            Shape::Disc { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Rect { y0, x0, y1, x1 } => y >= y0 && y <= y1 && x >= x0 && x <= x1,
            Shape::Stripe { ny, nx, off, width } => (ny * y + nx * x - off).abs() <= width,
        }
    }
}

/// One `3×size×size` image, fully determined by `seed`.
pub fn toy_image(seed: u64, size: usize) -> Result<ImageTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;
    let mut bg = [0.0f32; 3];
    for c in bg.iter_mut() {
        *c = rng.random_range(0.2..0.8);
    }
    let gratings: Vec<(f32, f32, f32, f32, [f32; 3])> = (0..3)
        .map(|_| {
            let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
            let freq: f32 = rng.random_range(0.15..1.2);
            let phase: f32 = rng.random_range(0.0..std::f32::consts::TAU);
            let amp: f32 = rng.random_range(0.03..0.12);
            let tint = [
                rng.random_range(0.5..1.0),
                rng.random_range(0.5..1.0),
                rng.random_range(0.5..1.0),
            ];
            (theta.cos() * freq, theta.sin() * freq, phase, amp, tint)
        })
        .collect();
    let n_shapes = rng.random_range(3..7);
    let shapes: Vec<(Shape, [f32; 3])> = (0..n_shapes)
        .map(|_| {
            let color = [
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
            ];
            let shape = match rng.random_range(0..3) {
                0 => Shape::Disc {
                    cy: rng.random_range(0.0..s),
                    cx: rng.random_range(0.0..s),
                    r: rng.random_range(0.08..0.3) * s,
                },
                1 => {
                    let (y0, x0) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
                    Shape::Rect {
                        y0,
                        x0,
                        y1: y0 + rng.random_range(0.1..0.5) * s,
                        x1: x0 + rng.random_range(0.1..0.5) * s,
                    }
                }
                _ => {
                    let theta: f32 = rng.random_range(0.0..std::f32::consts::PI);
                    Shape::Stripe {
                        ny: theta.sin(),
                        nx: theta.cos(),
                        off: rng.random_range(0.0..s),
                        width: rng.random_range(0.02..0.08) * s,
                    }
                }
            };
            (shape, color)
        })
        .collect();
    let texture: Vec<f32> = (0..size * size).map(|_| rng.random_range(-0.04..0.04)).collect();
    ImageTensor::from_fn(3, size, size, |c, y, x| {
        let (yf, xf) = (y as f32 + 0.5, x as f32 + 0.5);
        let mut v = bg[c];
        for (shape, color) in &shapes {
            if shape.contains(yf, xf) {
                v = 0.25 * v + 0.75 * color[c];
            }
        }
        for &(fy, fx, ph, amp, tint) in &gratings {
            v += amp * tint[c] * (fy * yf + fx * xf + ph).sin();
        }
        v + texture[y * size + x]
    })
}

/// `n` images seeded by `(seed, index)`.
pub fn toy_set(n: usize, size: usize, seed: u64, exec: Exec) -> Result<Vec<ImageTensor>> {
    try_map_indexed(exec, n, |i| toy_image(derive_seed(seed, i as u64), size))
}

/// Toy blur domain: HR images of side `hr_size` and their LR versions,
/// Gaussian-blurred with a per-image sigma drawn from `sigma` and then
/// bicubic-downsampled by `scale`. Returns `(lr, hr)` pairs.
pub fn toy_blur_pairs(
    n: usize,
    hr_size: usize,
    scale: usize,
    sigma: (f32, f32),
    seed: u64,
    exec: Exec,
) -> Result<Vec<(ImageTensor, ImageTensor)>> {
    if !(sigma.0 > 0.0 && sigma.0 <= sigma.1) {
        return Err(Error::Invalid(format!("bad blur range {sigma:?}")));
    }
    try_map_indexed(exec, n, |i| {
        let s = derive_seed(seed, i as u64);
        let hr = toy_image(s, hr_size)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s, 1));
        let sig = if sigma.0 == sigma.1 { sigma.0 } else { rng.random_range(sigma.0..=sigma.1) };
        let recipe = DegradationRecipe::single(Stage::GaussianBlur { sigma: sig }, scale, s);
        Ok((apply_recipe(&hr, &recipe)?, hr))
    })
}

/// Writes `toy_<i>.png` files into `dir` and returns their paths.
pub fn write_toy_set(dir: impl AsRef<Path>, n: usize, size: usize, seed: u64, exec: Exec) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let images = toy_set(n, size, seed, exec)?;
    images
        .iter()
        .enumerate()
        .map(|(i, img)| {
            let p = dir.join(format!("toy_{i:05}.png"));
            save_image(img, &p)?;
            Ok(p)
        })
        .collect()
}
