//! Throughput harness comparing the PA motion cue with Horn–Schunck flow.

use std::fmt::Write as _;
use std::time::Instant;

use pan_core::flow::{horn_schunck, luminance, DEFAULT_ITERS, DEFAULT_LAMBDA};
use pan_core::ops;
use pan_core::pa::{init_pa_weights, PaConfig, PaModule};
use pan_core::{ParamSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Method {
    /// PA map of a pair (d = 1, C = 8, k = 7), which is also its motion-cue encoding.
    Pa,
    /// PA map plus the attention encoding: sigmoid gate on the earlier frame's mean feature map.
    PaAttention,
    /// PA with d = 0: per-pixel RGB distance.
    RawDiff,
    HornSchunck { iters: usize, lambda: f32 },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Pa => "PA (d=1, C=8, k=7)".into(),
            Method::PaAttention => "PA + attention encoding".into(),
            Method::RawDiff => "RawDiff (d=0)".into(),
            Method::HornSchunck { iters, .. } => format!("Horn-Schunck ({iters} iters)"),
        }
    }

    pub fn horn_schunck() -> Self {
        Method::HornSchunck {
            iters: DEFAULT_ITERS,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub size: usize,
    pub pairs: usize,
    pub reps: usize,
    pub threads: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            size: 224,
            pairs: 64,
            reps: 5,
            threads: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub label: String,
    /// Median over repetitions of (batch wall time / pairs).
    pub ms_per_pair: f64,
    pub ms_per_pair_min: f64,
    pub ms_per_pair_max: f64,
    pub fps: f64,
    pub size: usize,
    pub pairs: usize,
    pub reps: usize,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub cpu: String,
    pub methods: Vec<MethodReport>,
}

impl BenchReport {
    pub fn find(&self, pred: impl Fn(&Method) -> bool) -> Option<&MethodReport> {
        self.methods.iter().find(|m| pred(&m.method))
    }

    /// `fps(PA) / fps(Horn–Schunck)` when both were measured.
    pub fn pa_over_hs(&self) -> Option<f64> {
        let pa = self.find(|m| *m == Method::Pa)?;
        let hs = self.find(|m| matches!(m, Method::HornSchunck { .. }))?;
        Some(pa.fps / hs.fps)
    }

    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut s = format!(
            "resolution {0}x{0}, {1} pairs per batch, {2} reps (median), {3} thread(s), cpu: {4}\n",
            c.size, c.pairs, c.reps, c.threads, self.cpu
        );
        let _ = writeln!(s, "{:<28} {:>12} {:>12} {:>12} {:>10}", "method", "ms/pair", "min", "max", "fps");
        for m in &self.methods {
            let _ = writeln!(
                s,
                "{:<28} {:>12.4} {:>12.4} {:>12.4} {:>10.1}",
                m.label, m.ms_per_pair, m.ms_per_pair_min, m.ms_per_pair_max, m.fps
            );
        }
        if let Some(r) = self.pa_over_hs() {
            let _ = writeln!(s, "PA / Horn-Schunck fps ratio: {r:.2}x");
        }
        s
    }
}

/// Seeded random frame pairs in `[0, 1]`, shared by every method.
pub fn random_pairs(size: usize, pairs: usize, seed: u64) -> Vec<(Tensor<f32>, Tensor<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..pairs)
        .map(|_| {
            let a = Tensor::from_fn(&[3, size, size], |_| rng.gen::<f32>());
            let b = Tensor::from_fn(&[3, size, size], |_| rng.gen::<f32>());
            (a, b)
        })
        .collect()
}

struct Runner {
    pa: (PaModule, ParamSet<f32>),
    raw: (PaModule, ParamSet<f32>),
}

impl Runner {
    fn new(seed: u64) -> Result<Self> {
        Ok(Self {
            pa: init_pa_weights(PaConfig::default(), seed)?,
            raw: init_pa_weights(
                PaConfig {
                    depth: 0,
                    ..PaConfig::default()
                },
                seed,
            )?,
        })
    }

    /// One pair through `method`; returns a checksum so the work is not optimised away.
    fn run(&self, method: &Method, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f32> {
        Ok(match *method {
            Method::Pa => self.pa.0.pair(&self.pa.1, a, b)?.data()[0],
            Method::RawDiff => self.raw.0.pair(&self.raw.1, a, b)?.data()[0],
            Method::PaAttention => {
                let pa = self.pa.0.pair(&self.pa.1, a, b)?;
                let mean = ops::channel_mean(&self.pa.0.features(&self.pa.1, a)?)?;
                ops::mul(&ops::sigmoid(&pa), &mean)?.data()[0]
            }
            Method::HornSchunck { iters, lambda } => {
                let flow = horn_schunck(&luminance(a)?, &luminance(b)?, lambda, iters)?;
                flow.u.data()[0]
            }
        })
    }
}

fn cpu_name() -> String {
    std::fs::read_to_string("/proc/cpuinfo")
        .ok()
        .and_then(|s| {
            s.lines()
                .find(|l| l.starts_with("model name"))
                .and_then(|l| l.split(':').nth(1))
                .map(|v| v.trim().to_string())
        })
        .unwrap_or_else(|| std::env::consts::ARCH.to_string())
}

/// Times every method on the same seeded pairs. Each method gets one
/// untimed warm-up batch, then `reps` timed batches run on a dedicated pool
/// of `threads` workers, parallel over pairs.
pub fn benchmark(methods: &[Method], cfg: &BenchConfig) -> Result<BenchReport> {
    let pairs = random_pairs(cfg.size, cfg.pairs.max(1), cfg.seed);
    let runner = Runner::new(cfg.seed)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .expect("thread pool");
    let mut reports = Vec::with_capacity(methods.len());
    for method in methods {
        let batch = || -> Result<f64> {
            pool.install(|| {
                let t = Instant::now();
                let sum: f32 = pairs
                    .par_iter()
                    .map(|(a, b)| runner.run(method, a, b))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .sum();
                std::hint::black_box(sum);
                Ok(t.elapsed().as_secs_f64() * 1e3 / pairs.len() as f64)
            })
        };
        batch()?;
        let mut times = (0..cfg.reps.max(1)).map(|_| batch()).collect::<Result<Vec<_>>>()?;
        times.sort_by(f64::total_cmp);
        let median = if times.len() % 2 == 1 {
            times[times.len() / 2]
        } else {
            0.5 * (times[times.len() / 2 - 1] + times[times.len() / 2])
        };
        reports.push(MethodReport {
            method: *method,
            label: method.label(),
            ms_per_pair: median,
            ms_per_pair_min: times[0],
            ms_per_pair_max: *times.last().unwrap(),
            fps: 1000.0 / median,
            size: cfg.size,
            pairs: pairs.len(),
            reps: times.len(),
            threads: cfg.threads.max(1),
        });
    }
    Ok(BenchReport {
        config: cfg.clone(),
        cpu: cpu_name(),
        methods: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_are_reproducible() {
        assert_eq!(random_pairs(8, 2, 3), random_pairs(8, 2, 3));
    }

    #[test]
    fn report_has_positive_fps() {
        let cfg = BenchConfig {
            size: 16,
            pairs: 2,
            reps: 3,
            threads: 1,
            seed: 0,
        };
        let r = benchmark(&[Method::Pa, Method::RawDiff, Method::horn_schunck()], &cfg).unwrap();
        assert_eq!(r.methods.len(), 3);
        assert!(r.methods.iter().all(|m| m.fps > 0.0 && m.ms_per_pair_min <= m.ms_per_pair));
        assert!(r.pa_over_hs().unwrap() > 0.0);
        assert!(r.to_text().contains("fps ratio"));
    }
}
