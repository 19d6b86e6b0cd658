//! Clips on disk: a directory of `frame_000001.png`, `frame_000002.png`, …
//! plus a `path,label,frames` index CSV for datasets.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageReader, RgbImage};
use pan_core::sampler::VideoClip;
use pan_core::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

pub const LABELS_FILE: &str = "labels.csv";

/// File name of 1-based frame `index`.
pub fn frame_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

fn parse_frame_index(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".png")?;
    (digits.len() == 6 && digits.bytes().all(|b| b.is_ascii_digit()))
        .then(|| digits.parse().ok())
        .flatten()
}

/// Reads a clip directory into planar 8-bit frames. The label is left at 0.
pub fn load_clip_bytes(dir: &Path) -> Result<VideoClip> {
    let mut indices = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let entry = entry.map_err(io_err(dir))?;
        if let Some(i) = entry.file_name().to_str().and_then(parse_frame_index) {
            indices.push(i);
        }
    }
    if indices.is_empty() {
        return Err(Error::EmptyClip { dir: dir.into() });
    }
    indices.sort_unstable();
    if let Some(missing) = (1..).zip(&indices).find(|(want, &got)| *want != got).map(|(w, _)| w) {
        return Err(Error::MissingFrame {
            dir: dir.into(),
            index: missing,
        });
    }
    let mut size = None;
    let mut frames = Vec::with_capacity(indices.len());
    for i in 1..=indices.len() {
        let path = dir.join(frame_name(i));
        let img = ImageReader::open(&path)
            .map_err(io_err(&path))?
            .with_guessed_format()
            .map_err(io_err(&path))?
            .decode()
            .map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?
            .into_rgb8();
        let dims = img.dimensions();
        match size {
            None => size = Some(dims),
            Some(expected) if expected != dims => {
                return Err(Error::MixedResolution {
                    path,
                    expected,
                    found: dims,
                })
            }
            _ => {}
        }
        frames.push(to_planar(&img));
    }
    let (w, h) = size.unwrap();
    Ok(VideoClip::new(h as usize, w as usize, frames, 0)?)
}

/// Frames of a clip directory as `[3, H, W]` tensors in `[0, 1]`.
pub fn load_clip(dir: &Path) -> Result<Vec<Tensor<f32>>> {
    let clip = load_clip_bytes(dir)?;
    Ok((0..clip.len()).map(|i| clip.frame(i)).collect())
}

fn to_planar(img: &RgbImage) -> Vec<u8> {
    let n = (img.width() * img.height()) as usize;
    let mut out = vec![0u8; 3 * n];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * n + i] = px.0[c];
        }
    }
    out
}

pub fn frame_image(clip: &VideoClip, i: usize) -> RgbImage {
    let n = clip.height * clip.width;
    let f = &clip.frames[i];
    RgbImage::from_fn(clip.width as u32, clip.height as u32, |x, y| {
        let p = y as usize * clip.width + x as usize;
        image::Rgb([f[p], f[n + p], f[2 * n + p]])
    })
}

pub fn save_clip(clip: &VideoClip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for i in 0..clip.len() {
        let path = dir.join(frame_name(i + 1));
        frame_image(clip, i).save(&path).map_err(|source| Error::Image { path, source })?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRow {
    /// Clip directory, relative to the index file's directory.
    pub path: String,
    pub label: usize,
    pub frames: usize,
}

pub fn write_index(path: &Path, rows: &[IndexRow]) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_index(path: &Path) -> Result<Vec<IndexRow>> {
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = r.headers().map_err(csv_err)?;
    if header.iter().collect::<Vec<_>>() != ["path", "label", "frames"] {
        return Err(Error::Index {
            path: path.into(),
            reason: format!("header must be `path,label,frames`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Loads every clip listed in `<dir>/labels.csv`, in index order.
pub fn load_dataset(dir: &Path) -> Result<Vec<VideoClip>> {
    let index = dir.join(LABELS_FILE);
    let rows = read_index(&index)?;
    rows.par_iter()
        .map(|row| {
            let clip_dir: PathBuf = dir.join(&row.path);
            let mut clip = load_clip_bytes(&clip_dir)?;
            if clip.len() != row.frames {
                return Err(Error::Index {
                    path: index.clone(),
                    reason: format!("{} lists {} frames but {} exist", row.path, row.frames, clip.len()),
                });
            }
            clip.label = row.label;
            Ok(clip)
        })
        .collect()
}
