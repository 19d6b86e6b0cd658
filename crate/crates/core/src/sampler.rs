//! Segment-based stack sampling and the in-memory clip type.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::init::rng_from_seed;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    /// Uniformly random start inside each segment.
    TrainRandom,
    /// Start centred inside each segment.
    TestCenter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    /// Number of segments `N`.
    pub segments: usize,
    /// Frames per stack `m`.
    pub stack: usize,
    pub mode: SampleMode,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            segments: 8,
            stack: 4,
            mode: SampleMode::TestCenter,
        }
    }
}

impl SamplerConfig {
    pub fn with_mode(self, mode: SampleMode) -> Self {
        Self { mode, ..self }
    }

    pub fn min_clip_len(&self) -> usize {
        self.segments * self.stack
    }
}

/// First-frame index of each of the `N` stacks for a clip of `len` frames.
///
/// Segment `t` covers `[t·len/N, (t+1)·len/N)`; a stack of `m` consecutive
/// frames is placed inside it.
pub fn stack_starts(len: usize, cfg: &SamplerConfig, seed: u64) -> Result<Vec<usize>> {
    if cfg.segments < 2 || !cfg.segments.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(cfg.segments));
    }
    if cfg.stack < 2 {
        return Err(Error::StackTooShort(cfg.stack));
    }
    if len < cfg.min_clip_len() {
        return Err(Error::ClipTooShort {
            len,
            required: cfg.min_clip_len(),
        });
    }
    let mut rng = rng_from_seed(seed);
    Ok((0..cfg.segments)
        .map(|t| {
            let lo = t * len / cfg.segments;
            let hi = (t + 1) * len / cfg.segments;
            let slack = hi - lo - cfg.stack;
            match cfg.mode {
                SampleMode::TestCenter => lo + slack / 2,
                SampleMode::TrainRandom => lo + rng.gen_range(0..=slack),
            }
        })
        .collect())
}

/// `N` stacks of `m` consecutive items; the first item of each stack is the
/// segment's representative frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledClip<F> {
    pub stacks: Vec<Vec<F>>,
}

impl<F> SampledClip<F> {
    pub fn first_frames(&self) -> impl Iterator<Item = &F> {
        self.stacks.iter().map(|s| &s[0])
    }
}

pub fn sample_clip<F: Clone>(frames: &[F], cfg: &SamplerConfig, seed: u64) -> Result<SampledClip<F>> {
    let starts = stack_starts(frames.len(), cfg, seed)?;
    Ok(SampledClip {
        stacks: starts
            .into_iter()
            .map(|s| frames[s..s + cfg.stack].to_vec())
            .collect(),
    })
}

/// A labelled clip of 8-bit RGB frames, stored planar (`[3, H, W]` per frame).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoClip {
    pub height: usize,
    pub width: usize,
    pub frames: Vec<Vec<u8>>,
    pub label: usize,
}

impl VideoClip {
    pub fn new(height: usize, width: usize, frames: Vec<Vec<u8>>, label: usize) -> Result<Self> {
        if height == 0 || width == 0 || frames.is_empty() {
            return Err(invalid("VideoClip", "empty clip"));
        }
        if let Some(bad) = frames.iter().position(|f| f.len() != 3 * height * width) {
            return Err(invalid(
                "VideoClip",
                alloc::format!("frame {bad} has {} bytes, expected {}", frames[bad].len(), 3 * height * width),
            ));
        }
        Ok(Self {
            height,
            width,
            frames,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame `i` as a `[3, H, W]` tensor scaled to `[0, 1]`.
    pub fn frame<T: Scalar>(&self, i: usize) -> Tensor<T> {
        let inv = 1.0 / 255.0;
        Tensor::new(
            &[3, self.height, self.width],
            self.frames[i].iter().map(|&b| T::from_f64(b as f64 * inv)).collect(),
        )
        .expect("frame size checked at construction")
    }

    /// Samples `N` stacks and converts only the frames they use.
    pub fn sample<T: Scalar>(&self, cfg: &SamplerConfig, seed: u64) -> Result<SampledClip<Tensor<T>>> {
        let starts = stack_starts(self.len(), cfg, seed)?;
        Ok(SampledClip {
            stacks: starts
                .into_iter()
                .map(|s| (s..s + cfg.stack).map(|i| self.frame(i)).collect())
                .collect(),
        })
    }
}
