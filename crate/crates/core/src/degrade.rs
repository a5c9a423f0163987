//! Second-order random degradation used to synthesize LR training inputs
//! from clean HR images.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagedata::{self, bicubic_resize, crop_rect, list_images, load_image, save_image, ImageTensor};
use crate::par::{self, Exec};

/// One degradation step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Stage {
    GaussianBlur { sigma: f32 },
    GaussianNoise { sigma: f32 },
    PoissonNoise { scale: f32 },
    Jpeg { quality: u8 },
}

/// Sampling ranges; each kind is included with probability `include_prob` per round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradationRanges {
    pub blur_sigma: (f32, f32),
    pub noise_sigma: (f32, f32),
    pub poisson_scale: (f32, f32),
    pub jpeg_quality: (u8, u8),
    pub include_prob: f64,
    pub rounds: usize,
}

impl Default for DegradationRanges {
    fn default() -> Self {
        Self {
            blur_sigma: (0.2, 3.0),
            noise_sigma: (0.0, 25.0 / 255.0),
            poisson_scale: (0.05, 3.0),
            jpeg_quality: (30, 95),
            include_prob: 0.5,
            rounds: 2,
        }
    }
}

impl DegradationRanges {
    pub fn validate(&self) -> Result<()> {
        let ordered = |name: &str, (lo, hi): (f32, f32)| {
            if lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi {
                Ok(())
            } else {
                Err(Error::Config(format!("degrade.{name} must satisfy 0 <= lo <= hi, got ({lo}, {hi})")))
            }
        };
        ordered("blur_sigma", self.blur_sigma)?;
        ordered("noise_sigma", self.noise_sigma)?;
        ordered("poisson_scale", self.poisson_scale)?;
        let (qlo, qhi) = self.jpeg_quality;
        if qlo == 0 || qlo > qhi || qhi > 100 {
            return Err(Error::Config(format!(
                "degrade.jpeg_quality must satisfy 1 <= lo <= hi <= 100, got ({qlo}, {qhi})"
            )));
        }
        if !(0.0..=1.0).contains(&self.include_prob) {
            return Err(Error::Config(format!(
                "degrade.include_prob must be in [0, 1], got {}",
                self.include_prob
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecipe {
    pub rounds: Vec<Vec<Stage>>,
    pub scale: usize,
    pub seed: u64,
}

impl DegradationRecipe {
    pub fn identity(scale: usize) -> Self {
        Self {
            rounds: Vec::new(),
            scale,
            seed: 0,
        }
    }

    /// A single stage followed by the downsample.
    pub fn single(stage: Stage, scale: usize, seed: u64) -> Self {
        Self {
            rounds: vec![vec![stage]],
            scale,
            seed,
        }
    }

    pub fn stages(&self) -> impl Iterator<Item = &Stage> {
        self.rounds.iter().flatten()
    }
}

/// Named fixed degradations used to build shifted corpora.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Blur2,
    Noise15,
    Jpeg40,
}

impl Preset {
    pub const ALL: [Preset; 3] = [Preset::Blur2, Preset::Noise15, Preset::Jpeg40];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Blur2 => "blur2",
            Preset::Noise15 => "noise15",
            Preset::Jpeg40 => "jpeg40",
        }
    }

    pub fn stage(self) -> Stage {
        match self {
            Preset::Blur2 => Stage::GaussianBlur { sigma: 2.0 },
            Preset::Noise15 => Stage::GaussianNoise { sigma: 15.0 / 255.0 },
            Preset::Jpeg40 => Stage::Jpeg { quality: 40 },
        }
    }

    /// Same-resolution recipe for this preset.
    pub fn recipe(self, seed: u64) -> DegradationRecipe {
        DegradationRecipe::single(self.stage(), 1, seed)
    }
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown degradation preset `{s}`")))
    }
}

fn check_scale(scale: usize) -> Result<()> {
    if matches!(scale, 1 | 2 | 4) {
        Ok(())
    } else {
        Err(Error::Invalid(format!("unsupported scale {scale}; expected 1, 2 or 4")))
    }
}

/// Mixes a base seed with an index into an independent 64-bit seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_recipe(seed: u64, scale: usize) -> Result<DegradationRecipe> {
    sample_recipe_with(seed, scale, &DegradationRanges::default())
}

pub fn sample_recipe_with(seed: u64, scale: usize, ranges: &DegradationRanges) -> Result<DegradationRecipe> {
    check_scale(scale)?;
    ranges.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = |rng: &mut ChaCha8Rng, (lo, hi): (f32, f32)| {
        if hi > lo {
            rng.random_range(lo..=hi)
        } else {
            lo
        }
    };
    let mut rounds = Vec::with_capacity(ranges.rounds);
    for _ in 0..ranges.rounds {
        let mut stages = Vec::new();
        // Fixed order within a round: blur, noise, poisson, jpeg.
        if rng.random_bool(ranges.include_prob) {
            stages.push(Stage::GaussianBlur {
                sigma: uniform(&mut rng, ranges.blur_sigma),
            });
        }
        if rng.random_bool(ranges.include_prob) {
            stages.push(Stage::GaussianNoise {
                sigma: uniform(&mut rng, ranges.noise_sigma),
            });
        }
        if rng.random_bool(ranges.include_prob) {
            stages.push(Stage::PoissonNoise {
                scale: uniform(&mut rng, ranges.poisson_scale),
            });
        }
        if rng.random_bool(ranges.include_prob) {
            let (lo, hi) = ranges.jpeg_quality;
            stages.push(Stage::Jpeg {
                quality: rng.random_range(lo..=hi.max(lo)),
            });
        }
        rounds.push(stages);
    }
    Ok(DegradationRecipe { rounds, scale, seed })
}

/// Normalized 1-D Gaussian taps over `[-r, r]` with `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f32) -> Vec<f64> {
    let sigma = sigma as f64;
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Separable Gaussian blur with reflected borders.
pub fn gaussian_blur(img: &ImageTensor, sigma: f32) -> Result<ImageTensor> {
    if sigma <= 0.0 {
        return Ok(img.clone());
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (c, h, w) = img.shape();
    let mut out = Vec::with_capacity(c * h * w);
    let mut tmp = vec![0.0f64; h * w];
    for ch in 0..c {
        let src = img.channel(ch);
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * src[y * w + reflect(x as isize + j as isize - r, w)] as f64)
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f64 = k
                    .iter()
                    .enumerate()
                    .map(|(j, kv)| kv * tmp[reflect(y as isize + j as isize - r, h) * w + x])
                    .sum();
                out.push(v as f32);
            }
        }
    }
    ImageTensor::new(c, h, w, out)
}

pub fn gaussian_noise<R: Rng + ?Sized>(img: &ImageTensor, sigma: f32, rng: &mut R) -> Result<ImageTensor> {
    if sigma <= 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0f32, sigma).map_err(|e| Error::Invalid(e.to_string()))?;
    let (c, h, w) = img.shape();
    let data = img.data().iter().map(|&v| v + normal.sample(rng)).collect();
    ImageTensor::new(c, h, w, data)
}

/// Shot noise: `Poisson(v·255·scale) / (255·scale)`.
pub fn poisson_noise<R: Rng + ?Sized>(img: &ImageTensor, scale: f32, rng: &mut R) -> Result<ImageTensor> {
    if scale <= 0.0 {
        return Err(Error::Invalid(format!("poisson scale must be > 0, got {scale}")));
    }
    let k = 255.0 * scale as f64;
    let (c, h, w) = img.shape();
    let mut data = Vec::with_capacity(img.data().len());
    for &v in img.data() {
        let lambda = v as f64 * k;
        let sample = if lambda > 0.0 {
            Poisson::new(lambda)
                .map_err(|e| Error::Invalid(e.to_string()))?
                .sample(rng)
        } else {
            0.0
        };
        data.push((sample / k) as f32);
    }
    ImageTensor::new(c, h, w, data)
}

/// Encodes and decodes through a real JPEG codec.
pub fn jpeg_roundtrip(img: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    let dynamic = imagedata::io_to_dynamic(img)?;
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut Cursor::new(&mut buf), quality.clamp(1, 100))
        .encode_image(&dynamic)?;
    let decoded = image::load_from_memory_with_format(&buf, image::ImageFormat::Jpeg)?;
    let out = imagedata::io_from_dynamic(decoded)?;
    // Grayscale inputs come back as luma; RGB stays RGB.
    if out.channels() != img.channels() {
        return Err(Error::Shape("jpeg round-trip changed channel count".into()));
    }
    Ok(out)
}

fn apply_stage(img: &ImageTensor, stage: &Stage, rng: &mut ChaCha8Rng) -> Result<ImageTensor> {
    match *stage {
        Stage::GaussianBlur { sigma } => gaussian_blur(img, sigma),
        Stage::GaussianNoise { sigma } => gaussian_noise(img, sigma, rng),
        Stage::PoissonNoise { scale } => poisson_noise(img, scale, rng),
        Stage::Jpeg { quality } => jpeg_roundtrip(img, quality),
    }
}

/// Runs every stage in order, then bicubic-downsamples by `recipe.scale`.
pub fn apply_recipe(y: &ImageTensor, recipe: &DegradationRecipe) -> Result<ImageTensor> {
    let a = recipe.scale;
    if a == 0 || y.height() % a != 0 || y.width() % a != 0 {
        return Err(Error::Shape(format!(
            "{}x{} is not divisible by scale {a}",
            y.height(),
            y.width()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    rng.set_stream(1);
    let mut cur = y.clone();
    for stage in recipe.stages() {
        cur = apply_stage(&cur, stage, &mut rng)?;
    }
    if a > 1 {
        cur = bicubic_resize(&cur, y.height() / a, y.width() / a)?;
    }
    Ok(cur)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub hr_path: String,
    pub lr_path: String,
    pub scale: usize,
    pub recipe_seed: u64,
}

/// Paired-dataset listing stored as CSV next to the image folders.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub const FILE_NAME: &'static str = "manifest.csv";

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Resolves an entry path against the manifest directory.
    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)?;
        w.write_record(["hr_path", "lr_path", "scale", "recipe_seed"])?;
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let entries = r.deserialize().collect::<std::result::Result<Vec<ManifestEntry>, _>>()?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, entries })
    }

    /// Loads every `(lr, hr)` pair.
    pub fn load_pairs(&self, exec: Exec) -> Result<Vec<(ImageTensor, ImageTensor)>> {
        par::try_map_indexed(exec, self.entries.len(), |i| {
            let e = &self.entries[i];
            let lr = load_image(self.resolve(&e.lr_path))?;
            let hr = load_image(self.resolve(&e.hr_path))?;
            imagedata::check_pair_scale(&lr, &hr, e.scale)?;
            Ok((lr, hr))
        })
    }
}

/// Degrades `count` HR crops (cycling through `hr_dir`) into `out_dir/{hr,lr}`
/// and writes `out_dir/manifest.csv`.
pub fn synth_dataset(
    hr_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    scale: usize,
    count: usize,
    seed: u64,
    ranges: &DegradationRanges,
    exec: Exec,
) -> Result<Manifest> {
    check_scale(scale)?;
    let sources = list_images(hr_dir.as_ref())?;
    if sources.is_empty() {
        return Err(Error::Empty(format!(
            "no PNG/JPEG images in {}",
            hr_dir.as_ref().display()
        )));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = par::try_map_indexed(exec, count, |i| {
        let src = &sources[i % sources.len()];
        let img = load_image(src)?;
        let (h, w) = (img.height() / scale * scale, img.width() / scale * scale);
        if h == 0 || w == 0 {
            return Err(Error::Shape(format!("{} is smaller than the scale", src.display())));
        }
        let hr = crop_rect(&img, 0, 0, h, w)?;
        let recipe_seed = derive_seed(seed, i as u64);
        let recipe = sample_recipe_with(recipe_seed, scale, ranges)?;
        let lr = apply_recipe(&hr, &recipe)?;
        let stem = src.file_stem().and_then(|s| s.to_str()).unwrap_or("img");
        let name = format!("{stem}_{i:05}.png");
        save_image(&hr, out_dir.join("hr").join(&name))?;
        save_image(&lr, out_dir.join("lr").join(&name))?;
        Ok(ManifestEntry {
            hr_path: format!("hr/{name}"),
            lr_path: format!("lr/{name}"),
            scale,
            recipe_seed,
        })
    })?;
    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.write(out_dir.join(Manifest::FILE_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(3, h, w, |c, y, x| {
            0.5 + 0.4 * ((x as f32 * 0.7 + c as f32).sin() * (y as f32 * 0.4).cos())
        })
        .unwrap()
    }

    #[test]
    fn recipe_is_deterministic_and_in_range() {
        let a = sample_recipe(99, 4).unwrap();
        assert_eq!(a, sample_recipe(99, 4).unwrap());
        assert_eq!(a.scale, 4);
        assert_eq!(a.rounds.len(), 2);
        for seed in 0..200 {
            for s in sample_recipe(seed, 2).unwrap().stages() {
                match *s {
                    Stage::GaussianBlur { sigma } => assert!((0.2..=3.0).contains(&sigma)),
                    Stage::GaussianNoise { sigma } => assert!((0.0..=25.0 / 255.0).contains(&sigma)),
                    Stage::PoissonNoise { scale } => assert!((0.05..=3.0).contains(&scale)),
                    Stage::Jpeg { quality } => assert!((30..=95).contains(&quality)),
                }
            }
        }
        assert!(sample_recipe(1, 3).is_err());
    }

    #[test]
    fn inclusion_frequency_is_half() {
        let mut counts = [0usize; 4];
        let mut rounds = 0;
        for seed in 1..=1000 {
            for round in sample_recipe(seed, 4).unwrap().rounds {
                rounds += 1;
                for s in round {
                    counts[match s {
                        Stage::GaussianBlur { .. } => 0,
                        Stage::GaussianNoise { .. } => 1,
                        Stage::PoissonNoise { .. } => 2,
                        Stage::Jpeg { .. } => 3,
                    }] += 1;
                }
            }
        }
        for c in counts {
            let f = c as f64 / rounds as f64;
            assert!((f - 0.5).abs() <= 0.05, "frequency {f}");
        }
    }

    #[test]
    fn identity_recipe_and_zero_noise() {
        let y = textured(8, 8);
        let out = apply_recipe(&y, &DegradationRecipe::identity(1)).unwrap();
        assert!(out.max_abs_diff(&y) < 1e-6);
        let r = DegradationRecipe::single(Stage::GaussianNoise { sigma: 0.0 }, 1, 5);
        assert_eq!(apply_recipe(&y, &r).unwrap(), y);
    }

    #[test]
    fn blurred_delta_peak_matches_explicit_kernel() {
        let n = 21;
        let delta = ImageTensor::from_fn(1, n, n, |_, y, x| if y == 10 && x == 10 { 1.0 } else { 0.0 })
            .unwrap();
        let out = gaussian_blur(&delta, 1.0).unwrap();
        // Explicit 2-D kernel over the same support.
        let r = 3i32;
        let mut total = 0.0f64;
        for y in -r..=r {
            for x in -r..=r {
                total += (-((x * x + y * y) as f64) / 2.0).exp();
            }
        }
        let peak = 1.0 / total;
        assert!((out.get(0, 10, 10) as f64 - peak).abs() < 1e-4);
    }

    #[test]
    fn blur_preserves_interior_mean() {
        let y = textured(64, 64);
        let b = gaussian_blur(&y, 1.5).unwrap();
        let mean = |img: &ImageTensor| {
            let mut s = 0.0f64;
            for yy in 8..56 {
                for xx in 8..56 {
                    s += img.get(0, yy, xx) as f64;
                }
            }
            s / (48.0 * 48.0)
        };
        assert!((mean(&y) - mean(&b)).abs() < 1e-3);
    }

    #[test]
    fn apply_recipe_shape_range_and_determinism() {
        let y = textured(32, 32);
        for seed in 0..10 {
            let r = sample_recipe(seed, 4).unwrap();
            let a = apply_recipe(&y, &r).unwrap();
            assert_eq!(a.shape(), (3, 8, 8));
            assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(a, apply_recipe(&y, &r).unwrap());
        }
        let bad = textured(30, 32);
        assert!(apply_recipe(&bad, &sample_recipe(0, 4).unwrap()).is_err());
    }

    #[test]
    fn jpeg_and_poisson_change_the_image() {
        let y = textured(16, 16);
        let j = jpeg_roundtrip(&y, 30).unwrap();
        assert_eq!(j.shape(), y.shape());
        assert!(j.max_abs_diff(&y) > 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = poisson_noise(&y, 0.1, &mut rng).unwrap();
        assert!(p.max_abs_diff(&y) > 0.0);
    }

    #[test]
    fn presets_parse() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        assert!("nope".parse::<Preset>().is_err());
    }

    #[test]
    fn ranges_are_validated() {
        assert!(DegradationRanges::default().validate().is_ok());
        let bad = DegradationRanges {
            blur_sigma: (2.0, 1.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(sample_recipe_with(0, 4, &bad).is_err());
        let bad = DegradationRanges {
            include_prob: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DegradationRanges {
            jpeg_quality: (0, 90),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn synth_dataset_writes_manifest() {
        let src = tempfile::tempdir().unwrap();
        for i in 0..2 {
            save_image(&textured(20 + i, 24), src.path().join(format!("s{i}.png"))).unwrap();
        }
        let out = tempfile::tempdir().unwrap();
        let m = synth_dataset(src.path(), out.path(), 4, 3, 7, &DegradationRanges::default(), Exec::Parallel).unwrap();
        assert_eq!(m.len(), 3);
        let back = Manifest::read(out.path().join(Manifest::FILE_NAME)).unwrap();
        assert_eq!(back.entries, m.entries);
        let pairs = back.load_pairs(Exec::Sequential).unwrap();
        assert_eq!(pairs[0].0.shape(), (3, 5, 6));
        assert_eq!(pairs[0].1.shape(), (3, 20, 24));

        let empty = tempfile::tempdir().unwrap();
        let m0 = synth_dataset(src.path(), empty.path(), 4, 0, 7, &DegradationRanges::default(), Exec::Parallel).unwrap();
        assert!(m0.is_empty());
        assert!(!empty.path().join("lr").exists());
        assert!(synth_dataset(empty.path(), out.path(), 4, 1, 7, &DegradationRanges::default(), Exec::Parallel).is_err());
    }
}
