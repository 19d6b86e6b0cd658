use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use pan::bench::{benchmark, BenchConfig, Method};
use pan::checkpoint::{load_model, save_model};
use pan::clip::{load_clip, load_dataset};
use pan::eval::{evaluate_parallel, workers_from_env, WORKERS_ENV};
use pan::export::export_pa_png;
use pan::synth::{split, write_dataset, SynthSpec};
use pan_core::gradsuite::{format_entry, run_suite};
use pan_core::model::{BranchInput, Ensemble, HeadKind, NetworkSpec, PanModel, Variant};
use pan_core::pa::{init_pa_weights, Encoding, PaConfig, PaModule};
use pan_core::sampler::VideoClip;
use pan_core::train::{train_model, EvalReport, TrainConfig};
use pan_core::ParamSet;
use serde_json::json;

#[derive(Parser)]
#[command(name = "pan", version, about = "Persistence-of-appearance action recognition toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Lite,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum EncodingArg {
    E1,
    E2,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Vap,
    Avg,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Subset {
    All,
    Train,
    Test,
}

/// Which clips of a dataset directory to use; `train`/`test` apply the
/// stratified seeded split.
#[derive(clap::Args)]
struct SplitArgs {
    #[arg(long, value_enum, default_value = "all")]
    split: Subset,
    #[arg(long, default_value_t = 0.25)]
    test_frac: f64,
    #[arg(long, default_value_t = 42)]
    split_seed: u64,
}

impl SplitArgs {
    fn load(&self, dir: &Path) -> anyhow::Result<Vec<VideoClip>> {
        let clips = load_dataset(dir)?;
        if !(0.0..1.0).contains(&self.test_frac) {
            bail!("--test-frac must lie in [0, 1)");
        }
        let data = match self.split {
            Subset::All => clips,
            Subset::Train => split(clips, self.test_frac, self.split_seed).0,
            Subset::Test => split(clips, self.test_frac, self.split_seed).1,
        };
        if data.is_empty() {
            bail!("no clips selected from {}", dir.display());
        }
        Ok(data)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a moving-square dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        clips_per_class: usize,
        #[arg(long, default_value_t = 32)]
        frames: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long)]
        square: Option<usize>,
        #[arg(long, default_value_t = 1)]
        speed: usize,
        #[arg(long)]
        noise: Option<f32>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long, value_enum, default_value = "lite")]
        variant: VariantArg,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0.01)]
        lr: f32,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "e1")]
        encoding: EncodingArg,
        #[arg(long, value_enum, default_value = "vap")]
        head: HeadArg,
        /// Zero the PA channels (Lite only): an RGB-only ablation.
        #[arg(long)]
        static_pa: bool,
        #[command(flatten)]
        split: SplitArgs,
        /// Per-epoch metrics as JSON lines.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Top-1 accuracy and confusion matrix of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Fail unless the checkpoint holds this variant.
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        /// Further checkpoints averaged with equal weight.
        #[arg(long)]
        ensemble: Vec<PathBuf>,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        json: bool,
    },
    /// PA maps of every adjacent frame pair of a clip, as PNG plus range sidecar.
    Extract {
        #[arg(long)]
        input: PathBuf,
        /// Model checkpoint whose PA weights are used; random weights otherwise.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        depth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// PA versus Horn–Schunck throughput.
    Bench {
        #[arg(long, default_value_t = 224)]
        size: usize,
        #[arg(long, default_value_t = 64)]
        pairs: usize,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        /// Defaults to PAN_WORKERS, then 1.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value_t = 100)]
        hs_iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference gradient suite; exits nonzero on any failure.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-clip timescale weights of a VAP model as JSON.
    Viz {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = workers_from_env() {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: {WORKERS_ENV}={n} ignored: {e}");
        }
    }
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cmd: Cmd) -> anyhow::Result<ExitCode> {
    match cmd {
        Cmd::Synth {
            out,
            clips_per_class,
            frames,
            size,
            square,
            speed,
            noise,
            seed,
        } => {
            let d = SynthSpec::default();
            let spec = SynthSpec {
                clips_per_class,
                frames,
                size,
                square: square.unwrap_or(d.square),
                speed,
                noise_sigma: noise.unwrap_or(d.noise_sigma),
                seed,
                ..d
            };
            let rows = write_dataset(&spec, &out)?;
            println!("wrote {} clips to {}", rows.len(), out.display());
        }
        Cmd::Train {
            variant,
            data,
            epochs,
            lr,
            batch,
            seed,
            out,
            encoding,
            head,
            static_pa,
            split,
            metrics,
        } => {
            let clips = split.load(&data)?;
            let classes = clips.iter().map(|c| c.label + 1).max().unwrap_or(0);
            let input = if static_pa { BranchInput::RgbStatic } else { BranchInput::RgbMotion };
            let mut spec = NetworkSpec::new(input, classes);
            spec.pa.encoding = match encoding {
                EncodingArg::E1 => Encoding::MotionCue,
                EncodingArg::E2 => Encoding::Attention,
            };
            if let HeadArg::Avg = head {
                spec.head = HeadKind::Average;
            }
            let mut model = match variant {
                VariantArg::Lite => PanModel::lite(spec, seed)?,
                VariantArg::Full if static_pa => bail!("--static-pa applies to the lite variant only"),
                VariantArg::Full => PanModel::full(spec, seed)?,
            };
            let cfg = TrainConfig {
                epochs,
                lr,
                batch,
                seed,
                ..TrainConfig::default()
            };
            let names: Vec<String> = model.networks().iter().map(|n| n.prefix.clone()).collect();
            let mut log = String::new();
            train_model(&mut model, &clips, &cfg, |branch, m, _| {
                println!(
                    "{} epoch {:>3} lr {:.5} loss {:.4} train_acc {:.3}",
                    names[branch], m.epoch, m.lr, m.loss, m.train_acc
                );
                log.push_str(
                    &json!({"branch": names[branch], "epoch": m.epoch, "lr": m.lr, "loss": m.loss, "train_acc": m.train_acc})
                        .to_string(),
                );
                log.push('\n');
                std::ops::ControlFlow::Continue(())
            })?;
            save_model(&model, &out)?;
            if let Some(path) = metrics {
                fs::write(&path, log).with_context(|| format!("writing {}", path.display()))?;
            }
            println!("saved {}", out.display());
        }
        Cmd::Eval {
            ckpt,
            data,
            variant,
            ensemble,
            split,
            json,
        } => {
            let model = load_model(&ckpt)?;
            if let Some(v) = variant {
                let want = match v {
                    VariantArg::Lite => Variant::Lite,
                    VariantArg::Full => Variant::Full,
                };
                if model.variant() != want {
                    return Err(pan::Error::VariantMismatch {
                        expected: format!("{want:?}"),
                        found: format!("{:?}", model.variant()),
                    }
                    .into());
                }
            }
            let clips = split.load(&data)?;
            let report = if ensemble.is_empty() {
                evaluate_parallel(&model, &clips)?
            } else {
                let mut members = vec![model];
                for p in &ensemble {
                    members.push(load_model(p)?);
                }
                evaluate_parallel(&Ensemble::equal(members)?, &clips)?
            };
            print_report(&report, json);
        }
        Cmd::Extract {
            input,
            weights,
            depth,
            seed,
            out,
        } => {
            let frames = load_clip(&input)?;
            let (module, params) = pa_weights(weights.as_deref(), depth, seed)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            for (i, pair) in frames.windows(2).enumerate() {
                let map = module.pair(&params, &pair[0], &pair[1])?;
                export_pa_png(&map, &out.join(format!("pa_{:06}.png", i + 1)))?;
            }
            println!("wrote {} PA maps to {}", frames.len().saturating_sub(1), out.display());
        }
        Cmd::Bench {
            size,
            pairs,
            reps,
            threads,
            hs_iters,
            seed,
            json,
        } => {
            let cfg = BenchConfig {
                size,
                pairs,
                reps,
                threads: threads.or_else(workers_from_env).unwrap_or(1),
                seed,
            };
            let hs = Method::HornSchunck {
                iters: hs_iters,
                lambda: pan_core::flow::DEFAULT_LAMBDA,
            };
            let report = benchmark(&[Method::Pa, Method::PaAttention, Method::RawDiff, hs], &cfg)?;
            if json {
                let mut v = serde_json::to_value(&report)?;
                v["pa_over_hs"] = json!(report.pa_over_hs());
                println!("{}", serde_json::to_string_pretty(&v)?);
            } else {
                print!("{}", report.to_text());
            }
        }
        Cmd::Gradcheck { seed } => {
            let entries = run_suite(seed)?;
            for e in &entries {
                println!("{}", format_entry(e));
            }
            let failed = entries.iter().filter(|e| !e.passed()).count();
            println!("{} checks, {} failed", entries.len(), failed);
            if failed > 0 {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Viz { ckpt, data, out, split } => {
            let model = load_model(&ckpt)?;
            let clips = split.load(&data)?;
            let report = evaluate_parallel(&model, &clips)?;
            if report.mean_weights.is_empty() {
                bail!("{} has no VAP head", ckpt.display());
            }
            let per_clip: Vec<_> = clips
                .iter()
                .zip(&report.per_clip_weights)
                .enumerate()
                .map(|(i, (c, w))| json!({"clip": i, "label": c.label, "weights": w}))
                .collect();
            let doc = json!({"mean_weights": report.mean_weights, "clips": per_clip});
            fs::write(&out, serde_json::to_string_pretty(&doc)?).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote timescale weights of {} clips to {}", clips.len(), out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// PA weights from the first PA-using network of a checkpoint, or freshly
/// initialised ones.
fn pa_weights(ckpt: Option<&Path>, depth: usize, seed: u64) -> anyhow::Result<(PaModule, ParamSet<f32>)> {
    let Some(path) = ckpt else {
        return Ok(init_pa_weights(PaConfig { depth, ..PaConfig::default() }, seed)?);
    };
    let model = load_model(path)?;
    let net = model
        .networks()
        .into_iter()
        .find(|n| n.arch.pa().is_some())
        .with_context(|| format!("{} has no PA module", path.display()))?;
    let module = net.arch.pa().unwrap().clone();
    if module.config().depth != depth {
        bail!(
            "--depth {depth} disagrees with the checkpoint's PA depth {}",
            module.config().depth
        );
    }
    Ok((module, net.params.clone()))
}

fn print_report(r: &EvalReport, json: bool) {
    if json {
        let doc = json!({"top1": r.top1, "confusion": r.confusion, "mean_weights": r.mean_weights});
        println!("{doc}");
        return;
    }
    println!("top1 {:.4}", r.top1);
    println!("confusion (rows = truth, columns = prediction):");
    for row in &r.confusion {
        println!("  {}", row.iter().map(|v| format!("{v:>5}")).collect::<String>());
    }
    for (i, w) in r.mean_weights.iter().enumerate() {
        println!("mean timescale weights [{i}]: {}", w.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "));
    }
}
