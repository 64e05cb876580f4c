//! Grayscale PNG dumps of internal feature maps.

use std::path::{Path, PathBuf};

use image::GrayImage;

use super::{Network, WGCAM_SCALES};
use crate::error::{Error, Result};
use crate::nn::{Graph, ParameterStore, Real, Tensor};

/// Channel mean of batch item 0, as an `h x w` plane.
fn channel_mean<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    let s = t.shape();
    let mut acc = vec![0.0; s.plane()];
    for c in 0..s.c {
        for (a, v) in acc.iter_mut().zip(t.plane(0, c)) {
            *a += v.as_f64();
        }
    }
    let inv = 1.0 / s.c.max(1) as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    acc
}

/// Min-max normalises to 0..=255. A zero-range map renders as all 0.
fn normalise(values: &[f64]) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !range.is_finite() || range <= 0.0 {
        return vec![0; values.len()];
    }
    values
        .iter()
        .map(|&v| ((v - lo) / range * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Channel-mean, min-max normalised image of a feature tensor (batch item 0).
pub fn feature_map_image<T: Real>(t: &Tensor<T>) -> GrayImage {
    let s = t.shape();
    GrayImage::from_raw(s.w as u32, s.h as u32, normalise(&channel_mean(t)))
        .expect("buffer matches dimensions")
}

/// 2x2 mosaic of a Haar decomposition `(n, 4C, h, w)`: LL top-left, LH
/// top-right, HL bottom-left, HH bottom-right. Each subband is the channel
/// mean over its `C` channels, normalised on its own.
pub fn subband_mosaic_image<T: Real>(dwt: &Tensor<T>) -> Result<GrayImage> {
    let s = dwt.shape();
    if !s.c.is_multiple_of(4) || s.c == 0 {
        return Err(Error::shape("subband_mosaic", format!("{s} is not a 4-band decomposition")));
    }
    let c = s.c / 4;
    let mut img = GrayImage::new(2 * s.w as u32, 2 * s.h as u32);
    for band in 0..4 {
        let mut acc = vec![0.0; s.plane()];
        for k in 0..c {
            for (a, v) in acc.iter_mut().zip(dwt.plane(0, band * c + k)) {
                *a += v.as_f64();
            }
        }
        let px = normalise(&acc);
        let (ox, oy) = ((band % 2) * s.w, (band / 2) * s.h);
        for y in 0..s.h {
            for x in 0..s.w {
                img.put_pixel((ox + x) as u32, (oy + y) as u32, image::Luma([px[y * s.w + x]]));
            }
        }
    }
    Ok(img)
}

fn save(img: &GrayImage, path: PathBuf) -> Result<PathBuf> {
    img.save_with_format(&path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
    Ok(path)
}

/// Runs `x` (batch item 0 is used) and writes `ELS.png`, `BOT.png`,
/// `DLS.png` and, for each WGCAM scale present, `DWT-1.png`..`DWT-3.png`.
/// Returns the written paths in that order.
pub fn dump_intermediates<T: Real>(
    network: &Network,
    store: &ParameterStore<T>,
    x: &Tensor<T>,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let x = x.batch_item(0)?;
    let mut g = Graph::new();
    let p = store.bind_constants(&mut g);
    let xv = g.input(x);
    let pass = network.forward(&mut g, &p, xv)?;
    let mut written = Vec::new();
    for (name, var) in [("ELS", pass.els), ("BOT", pass.bot), ("DLS", pass.dls)] {
        written.push(save(&feature_map_image(g.value(var)), out_dir.join(format!("{name}.png")))?);
    }
    for k in 0..WGCAM_SCALES {
        if let Some(var) = pass.dwt[k] {
            let img = subband_mosaic_image(g.value(var))?;
            written.push(save(&img, out_dir.join(format!("DWT-{}.png", k + 1)))?);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Shape;
    use crate::wavelet::dwt_haar_forward;

    #[test]
    fn normalise_spans_full_range() {
        assert_eq!(normalise(&[1.0, 2.0, 3.0]), vec![0, 128, 255]);
        assert_eq!(normalise(&[4.0, 4.0]), vec![0, 0]);
    }

    #[test]
    fn constant_input_mosaic_has_flat_detail_bands() {
        let x = Tensor::<f64>::from_fn(Shape::new(1, 2, 8, 8), |_, c, _, _| c as f64 + 0.5);
        let dwt = dwt_haar_forward(&x).unwrap();
        let img = subband_mosaic_image(&dwt.tensor).unwrap();
        assert_eq!(img.dimensions(), (8, 8));
        // every subband of a constant map has zero range and renders as 0
        assert!(img.pixels().all(|p| p.0[0] == 0));
    }
}
