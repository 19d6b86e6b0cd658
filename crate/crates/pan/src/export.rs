//! 8-bit grayscale PNG export of single-channel maps with a JSON sidecar that
//! records the true value range.

use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use pan_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapRange {
    pub min: f32,
    pub max: f32,
    /// Set when `max == min`; the image is then uniform mid-gray.
    pub degenerate: bool,
}

fn plane_dims(map: &Tensor<f32>) -> Result<(usize, usize)> {
    match map.shape() {
        [1, h, w] | [h, w] => Ok((*h, *w)),
        s => Err(pan_core::Error::InvalidArgument {
            op: "export_pa_png",
            reason: format!("expected a [1, H, W] or [H, W] map, got {s:?}"),
        }
        .into()),
    }
}

/// Min-max normalises `map` (`[1, H, W]` or `[H, W]`) to `0..=255`.
pub fn quantize(map: &Tensor<f32>) -> Result<(GrayImage, MapRange)> {
    let (h, w) = plane_dims(map)?;
    if !map.all_finite() {
        return Err(Error::NonFinite);
    }
    let d = map.data();
    let min = d.iter().copied().fold(f32::INFINITY, f32::min);
    let max = d.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let degenerate = max == min;
    let scale = if degenerate { 0.0 } else { 255.0 / (max as f64 - min as f64) };
    let pixels = d
        .iter()
        .map(|&v| {
            if degenerate {
                128
            } else {
                ((v as f64 - min as f64) * scale).round().clamp(0.0, 255.0) as u8
            }
        })
        .collect();
    let img = GrayImage::from_raw(w as u32, h as u32, pixels).expect("buffer matches dimensions");
    Ok((img, MapRange { min, max, degenerate }))
}

/// Inverse of [`quantize`] up to half a quantisation step, `(max − min) / 510`.
pub fn dequantize(img: &GrayImage, range: &MapRange) -> Tensor<f32> {
    let (w, h) = img.dimensions();
    let span = range.max as f64 - range.min as f64;
    Tensor::new(
        &[1, h as usize, w as usize],
        img.as_raw()
            .iter()
            .map(|&p| {
                if range.degenerate {
                    range.min
                } else {
                    (range.min as f64 + p as f64 / 255.0 * span) as f32
                }
            })
            .collect(),
    )
    .expect("buffer matches dimensions")
}

pub fn sidecar_path(png: &Path) -> PathBuf {
    png.with_extension("json")
}

/// Writes `path` (PNG) and its `.json` sidecar.
pub fn export_pa_png(map: &Tensor<f32>, path: &Path) -> Result<MapRange> {
    let (img, range) = quantize(map)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    img.save(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    let side = sidecar_path(path);
    let json = serde_json::to_string(&range).map_err(|source| Error::Json {
        path: side.clone(),
        source,
    })?;
    fs::write(&side, json + "\n").map_err(io_err(&side))?;
    Ok(range)
}

/// Reads an exported PNG and its sidecar back into a `[1, H, W]` map.
pub fn import_pa_png(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.into(),
            source,
        })?
        .into_luma8();
    let side = sidecar_path(path);
    let text = fs::read_to_string(&side).map_err(io_err(&side))?;
    let range: MapRange = serde_json::from_str(&text).map_err(|source| Error::Json { path: side, source })?;
    Ok(dequantize(&img, &range))
}
