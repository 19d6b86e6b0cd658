//! The finite-difference gradient suite: every primitive, each module and the
//! PAN Lite composite, all in 64-bit arithmetic.
//!
//! Each check registers its inputs as parameters and differentiates
//! `L = Σ r ⊙ op(inputs)` for a fixed random projection `r`, so the upstream
//! gradient handed to the backward pass is `r` itself.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::ToyBackbone;
use crate::error::Result;
use crate::gradcheck::{grad_check, GradCheck};
use crate::init::rng_from_seed;
use crate::loss::cross_entropy;
use crate::model::{Architecture, BranchInput, HeadKind, NetworkSpec};
use crate::ops;
use crate::pa::{Encoding, PaConfig, PaModule};
use crate::param::{ParamId, ParamSet};
use crate::sampler::SampledClip;
use crate::tensor::Tensor;
use crate::vap::{AverageHead, VapHead};

pub const SUITE_EPS: f64 = 1e-5;
pub const PRIMITIVE_TOLERANCE: f64 = 1e-6;
pub const COMPOSITE_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub report: GradCheck,
    pub tolerance: f64,
}

impl SuiteEntry {
    pub fn passed(&self) -> bool {
        self.report.max_rel_error < self.tolerance
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Values spaced at least `gap` apart in random order, so max and relu
/// decisions cannot flip under an `eps` perturbation.
fn separated(rng: &mut ChaCha8Rng, shape: &[usize], gap: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0 + 0.5) * gap).collect();
    v.shuffle(rng);
    Tensor::new(shape, v).expect("length matches shape")
}

/// `L = Σ r ⊙ y`, returning `L`; `r` doubles as the upstream gradient.
fn project(y: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

struct Case {
    params: ParamSet<f64>,
    ids: Vec<ParamId>,
}

impl Case {
    fn new(inputs: Vec<(&str, Tensor<f64>)>) -> Result<Self> {
        let mut params = ParamSet::new();
        let ids = inputs
            .into_iter()
            .map(|(n, t)| params.register(n, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { params, ids })
    }
}

fn check<F>(name: &'static str, tolerance: f64, mut case: Case, mut loss: F) -> Result<SuiteEntry>
where
    F: FnMut(&mut ParamSet<f64>, &[ParamId]) -> Result<f64>,
{
    let ids = case.ids.clone();
    let report = grad_check(&mut case.params, SUITE_EPS, |p| loss(p, &ids))?;
    Ok(SuiteEntry { name, report, tolerance })
}

/// Runs every check; the caller decides what to do with failures.
pub fn run_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = rng_from_seed(seed);
    let rng = &mut rng;
    let tol = PRIMITIVE_TOLERANCE;
    let mut out = Vec::new();

    for (name, stride) in [("conv2d", 1usize), ("conv2d_stride2", 2)] {
        let case = Case::new(vec![
            ("x", uniform(rng, &[2, 6, 7], -1.0, 1.0)),
            ("w", uniform(rng, &[3, 2, 3, 3], -0.5, 0.5)),
            ("b", uniform(rng, &[3], -0.5, 0.5)),
        ])?;
        let oh = ops::conv2d_output_size(6, 3, stride, 1).unwrap();
        let ow = ops::conv2d_output_size(7, 3, stride, 1).unwrap();
        let r = uniform(rng, &[3, oh, ow], -1.0, 1.0);
        out.push(check(name, tol, case, |p, id| {
            let y = ops::conv2d(p.value(id[0]), p.value(id[1]), Some(p.value(id[2])), stride, 1)?;
            let g = ops::conv2d_backward(p.value(id[0]), p.value(id[1]), &r, stride, 1, true)?;
            p.accumulate(id[0], &g.input.unwrap())?;
            p.accumulate(id[1], &g.weight)?;
            p.accumulate(id[2], &g.bias)?;
            Ok(project(&y, &r))
        })?);
    }

    {
        let case = Case::new(vec![
            ("x", uniform(rng, &[5], -1.0, 1.0)),
            ("w", uniform(rng, &[3, 5], -1.0, 1.0)),
            ("b", uniform(rng, &[3], -1.0, 1.0)),
        ])?;
        let r = uniform(rng, &[3], -1.0, 1.0);
        out.push(check("fc", tol, case, |p, id| {
            let y = ops::fc(p.value(id[0]), p.value(id[1]), Some(p.value(id[2])))?;
            let g = ops::fc_backward(p.value(id[0]), p.value(id[1]), &r)?;
            p.accumulate(id[0], &g.input)?;
            p.accumulate(id[1], &g.weight)?;
            p.accumulate(id[2], &g.bias)?;
            Ok(project(&y, &r))
        })?);
    }

    {
        let case = Case::new(vec![("x", separated(rng, &[4, 5], 0.05))])?;
        let r = uniform(rng, &[4, 5], -1.0, 1.0);
        out.push(check("relu", tol, case, |p, id| {
            let x = p.value(id[0]).clone();
            p.accumulate(id[0], &ops::relu_backward(&x, &r)?)?;
            Ok(project(&ops::relu(&x), &r))
        })?);
    }

    {
        let case = Case::new(vec![("x", uniform(rng, &[12], -4.0, 4.0))])?;
        let r = uniform(rng, &[12], -1.0, 1.0);
        out.push(check("sigmoid", tol, case, |p, id| {
            let y = ops::sigmoid(p.value(id[0]));
            p.accumulate(id[0], &ops::sigmoid_backward(&y, &r)?)?;
            Ok(project(&y, &r))
        })?);
    }

    {
        let case = Case::new(vec![("x", uniform(rng, &[7], -3.0, 3.0))])?;
        let r = uniform(rng, &[7], -1.0, 1.0);
        out.push(check("softmax", tol, case, |p, id| {
            let y = ops::softmax(p.value(id[0]));
            p.accumulate(id[0], &ops::softmax_backward(&y, &r)?)?;
            Ok(project(&y, &r))
        })?);
    }

    {
        let case = Case::new(vec![
            ("a", uniform(rng, &[2, 3, 3], -1.0, 1.0)),
            ("b", uniform(rng, &[2, 3, 3], -1.0, 1.0)),
        ])?;
        let r = uniform(rng, &[2, 3, 3], -1.0, 1.0);
        out.push(check("mul", tol, case, |p, id| {
            let (a, b) = (p.value(id[0]).clone(), p.value(id[1]).clone());
            let (ga, gb) = ops::mul_backward(&a, &b, &r)?;
            p.accumulate(id[0], &ga)?;
            p.accumulate(id[1], &gb)?;
            Ok(project(&ops::mul(&a, &b)?, &r))
        })?);
    }

    {
        let case = Case::new(vec![("x", uniform(rng, &[3, 4, 5], -1.0, 1.0))])?;
        let r = uniform(rng, &[1, 4, 5], -1.0, 1.0);
        out.push(check("channel_mean", tol, case, |p, id| {
            let x = p.value(id[0]).clone();
            p.accumulate(id[0], &ops::channel_mean_backward(x.shape(), &r)?)?;
            Ok(project(&ops::channel_mean(&x)?, &r))
        })?);
    }

    {
        let case = Case::new(vec![("x", uniform(rng, &[3, 4, 5], -1.0, 1.0))])?;
        let r = uniform(rng, &[1, 4, 5], -1.0, 1.0);
        out.push(check("channel_l2", tol, case, |p, id| {
            let x = p.value(id[0]).clone();
            let y = ops::channel_l2(&x, 1e-12)?;
            p.accumulate(id[0], &ops::channel_l2_backward(&x, &y, &r)?)?;
            Ok(project(&y, &r))
        })?);
    }

    for (name, kernel, dilation) in [("maxpool_time_k8", 8usize, 1usize), ("maxpool_time_k4d2", 4, 2), ("maxpool_time_k2d4", 2, 4)] {
        let case = Case::new(vec![("f", separated(rng, &[8, 3], 0.05))])?;
        let len = ops::pooled_length(8, kernel, 1, dilation).unwrap();
        let r = uniform(rng, &[len, 3], -1.0, 1.0);
        out.push(check(name, tol, case, |p, id| {
            let pooled = ops::dilated_maxpool_time(p.value(id[0]), kernel, 1, dilation)?;
            p.accumulate(id[0], &ops::dilated_maxpool_time_backward(&pooled, &r)?)?;
            Ok(project(&pooled.output, &r))
        })?);
    }

    {
        let case = Case::new(vec![("x", separated(rng, &[2, 5, 6], 0.02))])?;
        let r = uniform(rng, &[2, 2, 3], -1.0, 1.0);
        out.push(check("maxpool2d", tol, case, |p, id| {
            let pooled = ops::maxpool2d(p.value(id[0]))?;
            p.accumulate(id[0], &ops::maxpool2d_backward(&pooled, &r)?)?;
            Ok(project(&pooled.output, &r))
        })?);
    }

    {
        let case = Case::new(vec![("x", uniform(rng, &[3, 4, 4], -1.0, 1.0))])?;
        let r = uniform(rng, &[3], -1.0, 1.0);
        out.push(check("global_avg_pool", tol, case, |p, id| {
            let x = p.value(id[0]).clone();
            p.accumulate(id[0], &ops::global_avg_pool_backward(x.shape(), &r)?)?;
            Ok(project(&ops::global_avg_pool(&x)?, &r))
        })?);
    }

    {
        let case = Case::new(vec![("s", uniform(rng, &[5], -2.0, 2.0))])?;
        out.push(check("cross_entropy", tol, case, |p, id| {
            let (l, g) = cross_entropy(p.value(id[0]), 3)?;
            p.accumulate(id[0], &g)?;
            Ok(l)
        })?);
    }

    for (name, encoding, depth) in [
        ("pa_module_e1", Encoding::MotionCue, 1usize),
        ("pa_module_e2", Encoding::Attention, 1),
        ("pa_module_e1_depth2", Encoding::MotionCue, 2),
    ] {
        let cfg = PaConfig {
            depth,
            channels: 3,
            kernel: 3,
            eps: 1e-12,
            encoding,
        };
        let mut params = ParamSet::new();
        let module = PaModule::register(cfg, &mut params, "pa", rng)?;
        for p in params.iter_mut() {
            if p.name.ends_with("bias") {
                p.value = Tensor::from_fn(p.value.shape(), |i| 0.1 * (i as f64 + 1.0));
            }
        }
        let frames: Vec<ParamId> = (0..3)
            .map(|i| params.register(format!("frame{i}"), uniform(rng, &[3, 6, 6], 0.0, 1.0)))
            .collect::<Result<_>>()?;
        let r = uniform(rng, &[2, 6, 6], -1.0, 1.0);
        let case = Case { params, ids: frames };
        out.push(check(name, tol, case, |p, id| {
            let x: Vec<Tensor<f64>> = id.iter().map(|&i| p.value(i).clone()).collect();
            let trace = module.forward(p, &x)?;
            let g = module.backward(p, &trace, &r, true)?.unwrap();
            for (&i, gi) in id.iter().zip(&g) {
                p.accumulate(i, gi)?;
            }
            Ok(project(&trace.encoded, &r))
        })?);
    }

    {
        let mut params = ParamSet::new();
        let head = VapHead::register(&mut params, "vap", 8, 5, 4, 4, rng)?;
        for name in ["vap.b1", "vap.b2"] {
            let id = params.id(name)?;
            let shape = params.value(id).shape().to_vec();
            *params.value_mut(id) = uniform(rng, &shape, -0.3, 0.3);
        }
        let f = params.register("f", separated(rng, &[8, 5], 0.05))?;
        let r = uniform(rng, &[4], -1.0, 1.0);
        out.push(check("vap_head", tol, Case { params, ids: vec![f] }, |p, id| {
            let trace = head.forward(p, p.value(id[0]))?;
            let g = head.backward(p, &trace, &r)?;
            p.accumulate(id[0], &g)?;
            Ok(project(&trace.scores, &r))
        })?);
    }

    {
        let mut params = ParamSet::new();
        let head = AverageHead::register(&mut params, "avg", 4, 5, 3, rng)?;
        let f = params.register("f", uniform(rng, &[4, 5], -1.0, 1.0))?;
        let r = uniform(rng, &[3], -1.0, 1.0);
        out.push(check("average_head", tol, Case { params, ids: vec![f] }, |p, id| {
            let (mean, scores) = head.forward(p, p.value(id[0]))?;
            let g = head.backward(p, &mean, &r)?;
            p.accumulate(id[0], &g)?;
            Ok(project(&scores, &r))
        })?);
    }

    {
        let mut params = ParamSet::new();
        let bb = ToyBackbone::register(&mut params, "bb", 2, &[3, 4], rng)?;
        let x = params.register("x", uniform(rng, &[2, 8, 8], -1.0, 1.0))?;
        let r = uniform(rng, &[4], -1.0, 1.0);
        out.push(check("backbone", tol, Case { params, ids: vec![x] }, |p, id| {
            let trace = bb.forward(p, p.value(id[0]))?;
            if let Some(g) = bb.backward(p, &trace, &r, true)? {
                p.accumulate(id[0], &g)?;
            }
            Ok(project(&trace.features, &r))
        })?);
    }

    out.push(pan_lite_composite(rng)?);
    Ok(out)
}

/// Full PAN Lite loss on 16×16 frames with `N = 4`, `m = 2`.
fn pan_lite_composite(rng: &mut ChaCha8Rng) -> Result<SuiteEntry> {
    let spec = NetworkSpec {
        input: BranchInput::RgbMotion,
        pa: PaConfig {
            depth: 1,
            channels: 8,
            kernel: 7,
            eps: 1e-12,
            encoding: Encoding::MotionCue,
        },
        segments: 4,
        stack: 2,
        widths: vec![4, 6],
        classes: 3,
        head: HeadKind::Vap { alpha: 4 },
    };
    let mut params = ParamSet::<f64>::new();
    let arch = Architecture::build(spec, &mut params, "lite", rng.gen())?;
    let clip = SampledClip {
        stacks: (0..4)
            .map(|_| (0..2).map(|_| uniform(rng, &[3, 16, 16], 0.0, 1.0)).collect())
            .collect(),
    };
    let case = Case { params, ids: vec![] };
    let label = 1;
    check("pan_lite", COMPOSITE_TOLERANCE, case, |p, _| {
        let (loss, _) = arch.loss_and_grad(p, &clip, label)?;
        Ok(loss)
    })
}

/// One line per check, `PASS`/`FAIL` first.
pub fn format_entry(e: &SuiteEntry) -> alloc::string::String {
    format!(
        "{} {:<22} max_rel_error={:.3e} (tol {:.0e}, {} scalars, worst {}[{}])",
        if e.passed() { "PASS" } else { "FAIL" },
        e.name,
        e.report.max_rel_error,
        e.tolerance,
        e.report.checked,
        e.report.worst_param,
        e.report.worst_index
    )
}
