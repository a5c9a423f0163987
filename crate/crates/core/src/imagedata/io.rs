use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use super::ImageTensor;
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// Loads a PNG or JPEG as a `[0, 1]` image.
///
/// Grayscale files load as one channel, everything else as RGB (alpha dropped).
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = image::guess_format(&bytes)?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Jpeg) {
        return Err(Error::Invalid(format!(
            "{}: unsupported image format {format:?}",
            path.display()
        )));
    }
    let decoded = image::load_from_memory_with_format(&bytes, format)?;
    if decoded.width() == 0 || decoded.height() == 0 {
        return Err(Error::Shape(format!("{}: zero-sized image", path.display())));
    }
    from_dynamic(decoded)
}

pub(crate) fn from_dynamic(decoded: DynamicImage) -> Result<ImageTensor> {
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    match decoded {
        DynamicImage::ImageLuma8(g) => ImageTensor::new(
            1,
            h,
            w,
            g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
        ),
        other => {
            let rgb = other.to_rgb8().into_raw();
            let n = h * w;
            let mut data = vec![0.0f32; 3 * n];
            for (i, px) in rgb.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    data[c * n + i] = px[c] as f32 / 255.0;
                }
            }
            ImageTensor::new(3, h, w, data)
        }
    }
}

/// 8-bit quantization `round(v·255)`.
#[inline]
pub(crate) fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub(crate) fn to_dynamic(img: &ImageTensor) -> Result<DynamicImage> {
    let (c, h, w) = img.shape();
    let n = h * w;
    match c {
        1 => {
            let raw = img.data().iter().map(|&v| quantize(v)).collect();
            Ok(DynamicImage::ImageLuma8(
                GrayImage::from_raw(w as u32, h as u32, raw).expect("buffer size matches"),
            ))
        }
        3 => {
            let mut raw = vec![0u8; 3 * n];
            for i in 0..n {
                for ch in 0..3 {
                    raw[3 * i + ch] = quantize(img.data()[ch * n + i]);
                }
            }
            Ok(DynamicImage::ImageRgb8(
                RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size matches"),
            ))
        }
        _ => Err(Error::Shape(format!("cannot save a {c}-channel image"))),
    }
}

/// Writes an 8-bit PNG or JPEG, chosen by extension (PNG when absent).
pub fn save_image(img: &ImageTensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let format = match ext_of(path).as_deref() {
        Some("jpg") | Some("jpeg") => ImageFormat::Jpeg,
        _ => ImageFormat::Png,
    };
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    to_dynamic(img)?.save_with_format(path, format)?;
    Ok(())
}

fn ext_of(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

/// PNG/JPEG files directly inside `dir`, sorted by file name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file()
            && ext_of(&path).is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str()))
        {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
