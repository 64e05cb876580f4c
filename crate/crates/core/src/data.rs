//! Paired image/mask PNG datasets, seeded splits, batching and a synthetic
//! blob generator.
//!
//! On-disk layout: `<root>/images/<id>.png` with `<root>/masks/<id>.png`.

use std::path::{Path, PathBuf};

use image::{GrayImage, Luma, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Shape, Tensor};

/// One image and its binary mask.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub id: String,
    /// `(1, 3, h, w)`, values in `[0, 1]`.
    pub image: Tensor,
    /// `(1, 1, h, w)`, values exactly 0 or 1.
    pub mask: Tensor,
}

impl SamplePair {
    pub fn size(&self) -> (usize, usize) {
        let s = self.image.shape();
        (s.h, s.w)
    }
}

fn open_png(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::io(path, e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })
}

/// Reads an RGB image scaled by its bit-depth maximum.
pub fn read_image(path: &Path) -> Result<Tensor> {
    let img = open_png(path)?.to_rgb32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.into_raw();
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| raw[(y * w + x) * 3 + c]))
}

/// Reads a mask; a pixel is foreground above half the bit-depth maximum
/// (`> 127` for 8-bit, `> 32767` for 16-bit).
pub fn read_mask(path: &Path) -> Result<Tensor> {
    let img = open_png(path)?.to_luma32f();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|v| if v > 0.5 { 1.0 } else { 0.0 }).collect();
    Tensor::new(Shape::new(1, 1, h, w), data)
}

fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every `*.png` of `images_dir` with its same-stem mask, sorted by id.
pub fn load_dataset(images_dir: impl AsRef<Path>, masks_dir: impl AsRef<Path>) -> Result<Vec<SamplePair>> {
    let (images_dir, masks_dir) = (images_dir.as_ref(), masks_dir.as_ref());
    if !masks_dir.is_dir() {
        return Err(Error::Dataset(format!("masks directory {} not found", masks_dir.display())));
    }
    let mut pairs = Vec::new();
    for (id, path) in png_stems(images_dir)? {
        let mask_path = masks_dir.join(format!("{id}.png"));
        if !mask_path.is_file() {
            return Err(Error::Dataset(format!(
                "image `{id}` has no mask (expected {})",
                mask_path.display()
            )));
        }
        let image = read_image(&path)?;
        let mask = read_mask(&mask_path)?;
        let (a, b) = (image.shape(), mask.shape());
        if (a.h, a.w) != (b.h, b.w) {
            return Err(Error::Dataset(format!(
                "`{id}`: image is {}x{} but mask is {}x{}",
                a.h, a.w, b.h, b.w
            )));
        }
        pairs.push(SamplePair { id, image, mask });
    }
    if pairs.is_empty() {
        return Err(Error::Dataset(format!("no PNG images in {}", images_dir.display())));
    }
    Ok(pairs)
}

/// [`load_dataset`] on `<root>/images` and `<root>/masks`.
pub fn load_dataset_root(root: impl AsRef<Path>) -> Result<Vec<SamplePair>> {
    let root = root.as_ref();
    load_dataset(root.join("images"), root.join("masks"))
}

pub fn write_image_png(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.c != 3 {
        return Err(Error::shape("write_image_png", format!("expected 3 channels, got {s}")));
    }
    let img = RgbImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        let px = |c| (image.at(0, c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        Rgb([px(0), px(1), px(2)])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Writes channel 0 of batch item 0 as 0/255 8-bit grayscale; values
/// `>= threshold` are foreground.
pub fn write_mask_png(path: &Path, mask: &Tensor, threshold: f64) -> Result<()> {
    let s = mask.shape();
    let plane = mask.plane(0, 0);
    let img = GrayImage::from_fn(s.w as u32, s.h as u32, |x, y| {
        let v = plane[y as usize * s.w + x as usize] as f64;
        Luma([if v >= threshold { 255 } else { 0 }])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

/// Writes pairs in the `<root>/images`, `<root>/masks` layout.
pub fn write_dataset(pairs: &[SamplePair], root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for sub in ["images", "masks"] {
        let d = root.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for p in pairs {
        write_image_png(&root.join("images").join(format!("{}.png", p.id)), &p.image)?;
        write_mask_png(&root.join("masks").join(format!("{}.png", p.id)), &p.mask, 0.5)?;
    }
    Ok(())
}

pub const DEFAULT_FRACTIONS: (f64, f64, f64) = (0.7, 0.2, 0.1);

/// Train/validation/test partition of sample ids.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
    pub fractions: (f64, f64, f64),
}

/// Shuffles ids with a seeded generator; validation and test get the floor
/// of their share and train the rest.
pub fn split_dataset(ids: &[String], fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::config(
            "split_fractions",
            format!("({a}, {b}, {c}) must be non-negative and sum to 1"),
        ));
    }
    if a > 0.0 && b > 0.0 && c > 0.0 && ids.len() < 3 {
        return Err(Error::Dataset(format!(
            "{} samples cannot fill three non-empty partitions",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = ids.len() as f64;
    // tolerance absorbs products like 10 * 0.2 landing just below an integer
    let n_val = (n * b + 1e-9).floor() as usize;
    let n_test = (n * c + 1e-9).floor() as usize;
    let n_train = ids.len() - n_val - n_test;
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok(DatasetSplit {
        train: shuffled,
        val,
        test,
        seed,
        fractions,
    })
}

/// Selects pairs by id, in the order of `ids`.
pub fn select<'a>(pairs: &'a [SamplePair], ids: &[String]) -> Result<Vec<&'a SamplePair>> {
    ids.iter()
        .map(|id| {
            pairs
                .iter()
                .find(|p| &p.id == id)
                .ok_or_else(|| Error::Dataset(format!("unknown sample id `{id}`")))
        })
        .collect()
}

/// A stacked group of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub images: Tensor,
    pub masks: Tensor,
}

pub fn make_batch(items: &[&SamplePair]) -> Result<Batch> {
    if items.is_empty() {
        return Err(Error::Dataset("empty batch".into()));
    }
    let images: Vec<&Tensor> = items.iter().map(|p| &p.image).collect();
    let masks: Vec<&Tensor> = items.iter().map(|p| &p.mask).collect();
    Ok(Batch {
        ids: items.iter().map(|p| p.id.clone()).collect(),
        images: Tensor::stack(&images)?,
        masks: Tensor::stack(&masks)?,
    })
}

/// Splits `0..n` into consecutive batches, optionally shuffled first. The
/// last batch may be smaller.
pub fn batch_indices(n: usize, batch_size: usize, shuffle: Option<&mut ChaCha8Rng>) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Some(rng) = shuffle {
        order.shuffle(rng);
    }
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

const BACKGROUND: [f32; 3] = [0.93, 0.74, 0.84];
const NUCLEUS: [f32; 3] = [0.36, 0.16, 0.47];
/// Supersampling factor per axis for ellipse coverage.
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    ry: f64,
    rx: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.rx).powi(2) + (v / self.ry).powi(2) <= 1.0
    }
}

fn blob_sample(rng: &mut ChaCha8Rng, size: usize) -> (Tensor, Tensor) {
    let s = size as f64;
    let count = rng.random_range(2..=4);
    let ellipses: Vec<Ellipse> = (0..count)
        .map(|_| {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            Ellipse {
                cy: rng.random_range(0.15 * s..0.85 * s),
                cx: rng.random_range(0.15 * s..0.85 * s),
                ry: rng.random_range(s / 10.0..s / 5.0),
                rx: rng.random_range(s / 10.0..s / 5.0),
                cos: angle.cos(),
                sin: angle.sin(),
            }
        })
        .collect();
    // smooth texture: a few random low-frequency waves plus pixel noise
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.5..3.0) * std::f64::consts::TAU / s,
                rng.random_range(0.5..3.0) * std::f64::consts::TAU / s,
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let mut coverage = vec![0f32; size * size];
    let mut mask = vec![0f32; size * size];
    let mut texture = vec![0f32; size * size];
    let sub = 1.0 / SUPERSAMPLE as f64;
    for y in 0..size {
        for x in 0..size {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let (py, px) = (y as f64 + (sy as f64 + 0.5) * sub, x as f64 + (sx as f64 + 0.5) * sub);
                    if ellipses.iter().any(|e| e.contains(py, px)) {
                        hits += 1;
                    }
                }
            }
            let i = y * size + x;
            coverage[i] = hits as f32 / (SUPERSAMPLE * SUPERSAMPLE) as f32;
            let (cy, cx) = (y as f64 + 0.5, x as f64 + 0.5);
            mask[i] = if ellipses.iter().any(|e| e.contains(cy, cx)) { 1.0 } else { 0.0 };
            let wave: f64 = waves.iter().map(|&(fy, fx, ph)| (fy * cy + fx * cx + ph).sin()).sum();
            texture[i] = (0.02 * wave) as f32 + rng.random_range(-0.03f32..0.03);
        }
    }
    let image = Tensor::from_fn(Shape::new(1, 3, size, size), |_, c, y, x| {
        let i = y * size + x;
        let a = coverage[i];
        (BACKGROUND[c] * (1.0 - a) + NUCLEUS[c] * a + texture[i]).clamp(0.0, 1.0)
    });
    let mask = Tensor::new(Shape::new(1, 1, size, size), mask).expect("size*size values");
    (image, mask)
}

/// Mask foreground fraction is kept inside this open interval.
pub const BLOB_FRACTION_RANGE: (f64, f64) = (0.02, 0.6);

/// `count` images of dark purple ellipses on a textured pink background, with
/// the ellipse interiors as masks. Deterministic in `seed`.
pub fn make_synthetic_blobs(count: usize, size: usize, seed: u64) -> Vec<SamplePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| loop {
            let (image, mask) = blob_sample(&mut rng, size);
            let frac = mask.data().iter().sum::<f32>() as f64 / (size * size) as f64;
            if frac > BLOB_FRACTION_RANGE.0 && frac < BLOB_FRACTION_RANGE.1 {
                break SamplePair {
                    id: format!("blob{i:03}"),
                    image,
                    mask,
                };
            }
        })
        .collect()
}
