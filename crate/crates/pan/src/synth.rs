//! Moving-square clips whose only label signal is the motion direction.

use std::fs;
use std::path::Path;

use pan_core::sampler::VideoClip;
use pan_core::train::mix_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clip::{save_clip, IndexRow, LABELS_FILE};
use crate::error::{io_err, Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Motion {
    MoveUp,
    MoveDown,
    MoveLeft,
    MoveRight,
}

impl Motion {
    pub const ALL: [Motion; 4] = [Motion::MoveUp, Motion::MoveDown, Motion::MoveLeft, Motion::MoveRight];

    /// Unit step as `(dy, dx)`.
    pub fn step(self) -> (isize, isize) {
        match self {
            Motion::MoveUp => (-1, 0),
            Motion::MoveDown => (1, 0),
            Motion::MoveLeft => (0, -1),
            Motion::MoveRight => (0, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Class `i` moves in direction `classes[i]`.
    pub classes: Vec<Motion>,
    pub clips_per_class: usize,
    pub frames: usize,
    pub size: usize,
    pub square: usize,
    /// Pixels per frame.
    pub speed: usize,
    /// Standard deviation of per-pixel Gaussian noise, in `[0, 1]` intensity units.
    pub noise_sigma: f32,
    /// Background texture is bilinearly interpolated from a `cells × cells` grid of random colours.
    pub texture_cells: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            classes: Motion::ALL.to_vec(),
            clips_per_class: 100,
            frames: 32,
            size: 64,
            square: 16,
            speed: 1,
            noise_sigma: 0.02,
            texture_cells: 8,
            seed: 42,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.classes.len() < 2 {
            return bad("need at least two classes".into());
        }
        if self.frames < 2 || self.square == 0 || self.speed == 0 || self.texture_cells < 2 {
            return bad("frames >= 2, square >= 1, speed >= 1 and texture_cells >= 2 required".into());
        }
        // The mid-clip position range is shared by all classes, so the square must fit
        // half a trajectory on each side of it.
        let half = self.speed * (self.frames / 2);
        if self.square + 2 * half > self.size {
            return bad(format!(
                "a {}px square moving {}px/frame for {} frames leaves a {}px frame",
                self.square, self.speed, self.frames, self.size
            ));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return bad("noise_sigma must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn num_clips(&self) -> usize {
        self.classes.len() * self.clips_per_class
    }

    /// Clip `index` has label `index % classes`.
    pub fn label_of(&self, index: usize) -> usize {
        index % self.classes.len()
    }

    /// Top-left corner of the square in every frame of clip `index`.
    pub fn trajectory(&self, index: usize) -> Vec<(usize, usize)> {
        self.layout(&mut clip_rng(self.seed, index), index).1
    }

    fn layout(&self, rng: &mut ChaCha8Rng, index: usize) -> ([f32; 3], Vec<(usize, usize)>) {
        let (dy, dx) = self.classes[self.label_of(index)].step();
        let mid = (self.frames / 2) as isize;
        let half = self.speed * (self.frames / 2);
        let free = self.size - self.square;
        // The position at the middle frame is drawn from the same range for every class.
        let on_axis = rng.gen_range(half..=free - half) as isize;
        let off_axis = rng.gen_range(0..=free) as isize;
        let colour = [rng.gen(), rng.gen(), rng.gen()];
        let path = (0..self.frames as isize)
            .map(|t| {
                let shift = (t - mid) * self.speed as isize;
                let (y, x) = if dy != 0 {
                    (on_axis + dy * shift, off_axis)
                } else {
                    (off_axis, on_axis + dx * shift)
                };
                (y as usize, x as usize)
            })
            .collect();
        (colour, path)
    }

    /// Generates clip `index`; every clip has its own random stream.
    pub fn clip(&self, index: usize) -> Result<VideoClip> {
        self.validate()?;
        let mut rng = clip_rng(self.seed, index);
        let (colour, path) = self.layout(&mut rng, index);
        let background = texture(&mut rng, self.size, self.texture_cells);
        let noise = Normal::new(0.0f32, self.noise_sigma).expect("sigma validated");
        let plane = self.size * self.size;
        let frames = path
            .iter()
            .map(|&(y0, x0)| {
                let mut f = background.clone();
                for (c, &col) in colour.iter().enumerate() {
                    for y in y0..y0 + self.square {
                        let row = c * plane + y * self.size;
                        f[row + x0..row + x0 + self.square].fill(col);
                    }
                }
                f.iter()
                    .map(|&v| {
                        let v = if self.noise_sigma > 0.0 { v + noise.sample(&mut rng) } else { v };
                        (v.clamp(0.0, 1.0) * 255.0).round() as u8
                    })
                    .collect()
            })
            .collect();
        Ok(VideoClip::new(self.size, self.size, frames, self.label_of(index))?)
    }

    /// All clips in index order.
    pub fn generate(&self) -> Result<Vec<VideoClip>> {
        self.validate()?;
        (0..self.num_clips()).into_par_iter().map(|i| self.clip(i)).collect()
    }
}

fn clip_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64))
}

/// Planar `[3, size, size]` texture in `[0, 1]`, smooth between random grid colours.
fn texture(rng: &mut ChaCha8Rng, size: usize, cells: usize) -> Vec<f32> {
    let grid: Vec<f32> = (0..3 * cells * cells).map(|_| rng.gen()).collect();
    let scale = (cells - 1) as f32 / (size - 1).max(1) as f32;
    let mut out = vec![0.0; 3 * size * size];
    for c in 0..3 {
        let g = &grid[c * cells * cells..(c + 1) * cells * cells];
        for y in 0..size {
            let fy = y as f32 * scale;
            let (y0, ty) = ((fy as usize).min(cells - 2), fy - (fy as usize).min(cells - 2) as f32);
            for x in 0..size {
                let fx = x as f32 * scale;
                let (x0, tx) = ((fx as usize).min(cells - 2), fx - (fx as usize).min(cells - 2) as f32);
                let at = |yy: usize, xx: usize| g[yy * cells + xx];
                let top = at(y0, x0) * (1.0 - tx) + at(y0, x0 + 1) * tx;
                let bottom = at(y0 + 1, x0) * (1.0 - tx) + at(y0 + 1, x0 + 1) * tx;
                out[c * size * size + y * size + x] = top * (1.0 - ty) + bottom * ty;
            }
        }
    }
    out
}

/// Stratified split: `test_fraction` of each class (rounded) goes to the test side.
pub fn split(clips: Vec<VideoClip>, test_fraction: f64, seed: u64) -> (Vec<VideoClip>, Vec<VideoClip>) {
    use rand::seq::SliceRandom;
    let classes = clips.iter().map(|c| c.label + 1).max().unwrap_or(0);
    let mut by_class: Vec<Vec<VideoClip>> = vec![Vec::new(); classes];
    for c in clips {
        by_class[c.label].push(c);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for mut group in by_class {
        group.shuffle(&mut rng);
        let n_test = (group.len() as f64 * test_fraction).round() as usize;
        let rest = group.split_off(n_test);
        test.extend(group);
        train.extend(rest);
    }
    (train, test)
}

/// Writes the clips, `labels.csv` and `manifest.json` under `out`.
pub fn write_dataset(spec: &SynthSpec, out: &Path) -> Result<Vec<IndexRow>> {
    spec.validate()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let rows = (0..spec.num_clips())
        .into_par_iter()
        .map(|i| {
            let clip = spec.clip(i)?;
            let name = format!("clip_{i:05}");
            save_clip(&clip, &out.join(&name))?;
            Ok(IndexRow {
                path: name,
                label: clip.label,
                frames: clip.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    crate::clip::write_index(&out.join(LABELS_FILE), &rows)?;
    let manifest = out.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(spec).map_err(|source| Error::Json {
        path: manifest.clone(),
        source,
    })?;
    fs::write(&manifest, json + "\n").map_err(io_err(&manifest))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            clips_per_class: 2,
            frames: 16,
            size: 32,
            square: 6,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn square_never_leaves_the_frame() {
        let s = SynthSpec::default();
        for i in 0..s.num_clips() {
            for (y, x) in s.trajectory(i) {
                assert!(y + s.square <= s.size && x + s.square <= s.size);
            }
        }
    }

    #[test]
    fn up_means_decreasing_rows() {
        let s = small();
        let path = s.trajectory(0);
        assert_eq!(s.classes[s.label_of(0)], Motion::MoveUp);
        assert!(path.windows(2).all(|p| p[1].0 < p[0].0 && p[1].1 == p[0].1));
    }

    #[test]
    fn impossible_geometry_rejected() {
        let s = SynthSpec {
            speed: 3,
            ..SynthSpec::default()
        };
        assert!(matches!(s.validate(), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn generation_is_deterministic() {
        let s = small();
        assert_eq!(s.generate().unwrap(), s.generate().unwrap());
        let other = SynthSpec { seed: 7, ..small() };
        assert_ne!(s.generate().unwrap(), other.generate().unwrap());
    }

    #[test]
    fn split_is_stratified() {
        let s = SynthSpec {
            clips_per_class: 8,
            ..small()
        };
        let (train, test) = split(s.generate().unwrap(), 0.25, 1);
        assert_eq!((train.len(), test.len()), (24, 8));
        for l in 0..4 {
            assert_eq!(test.iter().filter(|c| c.label == l).count(), 2);
        }
    }
}
