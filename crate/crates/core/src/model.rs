//! PAN assembly: single-backbone networks over sampled stacks, the Lite and
//! Full variants, score fusion and ensembling.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::backbone::{BackboneTrace, ToyBackbone, DEFAULT_WIDTHS};
use crate::error::{invalid, Error, Result};
use crate::init::rng_from_seed;
use crate::loss::cross_entropy;
use crate::pa::{Encoding, PaConfig, PaModule, PaTrace};
use crate::param::ParamSet;
use crate::sampler::{SampleMode, SampledClip, SamplerConfig, VideoClip};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vap::{AverageHead, VapHead, VapTrace, DEFAULT_ALPHA};

/// What a network's backbone sees for each segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchInput {
    /// The stack's first RGB frame.
    Rgb,
    /// The encoded PA maps of the stack.
    Motion,
    /// First frame and encoded PA maps, concatenated along channels.
    RgbMotion,
    /// First frame concatenated with all-zero PA channels: the RGB-only ablation of [`BranchInput::RgbMotion`].
    RgbStatic,
}

impl BranchInput {
    fn code(self) -> u32 {
        match self {
            Self::Rgb => 0,
            Self::Motion => 1,
            Self::RgbMotion => 2,
            Self::RgbStatic => 3,
        }
    }

    fn from_code(c: u32) -> Option<Self> {
        Some(match c {
            0 => Self::Rgb,
            1 => Self::Motion,
            2 => Self::RgbMotion,
            3 => Self::RgbStatic,
            _ => return None,
        })
    }

    pub fn uses_pa(self) -> bool {
        matches!(self, Self::Motion | Self::RgbMotion)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Vap { alpha: usize },
    Average,
}

/// Everything needed to rebuild a network's architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input: BranchInput,
    pub pa: PaConfig,
    pub segments: usize,
    pub stack: usize,
    pub widths: Vec<usize>,
    pub classes: usize,
    pub head: HeadKind,
}

/// The `f64` spelled by the shortest decimal form of `v`.
fn widen(v: f32) -> f64 {
    format!("{v}").parse().unwrap_or(v as f64)
}

impl NetworkSpec {
    pub fn new(input: BranchInput, classes: usize) -> Self {
        Self {
            input,
            pa: PaConfig::default(),
            segments: 8,
            stack: 4,
            widths: DEFAULT_WIDTHS.to_vec(),
            classes,
            head: HeadKind::Vap { alpha: DEFAULT_ALPHA },
        }
    }

    pub fn sampler(&self, mode: SampleMode) -> SamplerConfig {
        SamplerConfig {
            segments: self.segments,
            stack: self.stack,
            mode,
        }
    }

    /// Backbone input channels: 3 for RGB, `m − 1` per PA encoding.
    pub fn backbone_channels(&self) -> usize {
        let motion = self.stack - 1;
        match self.input {
            BranchInput::Rgb => 3,
            BranchInput::Motion => motion,
            BranchInput::RgbMotion | BranchInput::RgbStatic => 3 + motion,
        }
    }

    /// Compact numeric form stored next to the weights in checkpoints:
    /// `[input, segments, stack, pa_depth, pa_channels, pa_kernel, encoding, head, alpha, classes, pa_eps]`.
    pub fn to_codes(&self) -> Vec<f32> {
        let (head, alpha) = match self.head {
            HeadKind::Vap { alpha } => (0, alpha),
            HeadKind::Average => (1, 0),
        };
        let enc = match self.pa.encoding {
            Encoding::MotionCue => 0,
            Encoding::Attention => 1,
        };
        vec![
            self.input.code() as f32,
            self.segments as f32,
            self.stack as f32,
            self.pa.depth as f32,
            self.pa.channels as f32,
            self.pa.kernel as f32,
            enc as f32,
            head as f32,
            alpha as f32,
            self.classes as f32,
            self.pa.eps as f32,
        ]
    }

    /// Inverse of [`NetworkSpec::to_codes`]; backbone widths come from `widths`.
    /// `pa_eps` is read back through its shortest decimal form, so a value such
    /// as `1e-12` returns as the same `f64`.
    pub fn from_codes(codes: &[f32], widths: Vec<usize>) -> Result<Self> {
        let bad = || invalid("NetworkSpec::from_codes", format!("malformed architecture record {codes:?}"));
        if codes.len() != 11 || codes[..10].iter().any(|&c| c < 0.0 || c != (c as u32) as f32) {
            return Err(bad());
        }
        let u = |i: usize| codes[i] as usize;
        let input = BranchInput::from_code(codes[0] as u32).ok_or_else(bad)?;
        let encoding = match u(6) {
            0 => Encoding::MotionCue,
            1 => Encoding::Attention,
            _ => return Err(bad()),
        };
        let head = match u(7) {
            0 => HeadKind::Vap { alpha: u(8) },
            1 => HeadKind::Average,
            _ => return Err(bad()),
        };
        Ok(Self {
            input,
            pa: PaConfig {
                depth: u(3),
                channels: u(4),
                kernel: u(5),
                eps: widen(codes[10]),
                encoding,
            },
            segments: u(1),
            stack: u(2),
            widths,
            classes: u(9),
            head,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Head {
    Vap(VapHead),
    Average(AverageHead),
}

/// Module wiring of one network; parameters live in a separate [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    spec: NetworkSpec,
    pa: Option<PaModule>,
    backbone: ToyBackbone,
    head: Head,
}

impl Architecture {
    pub fn build<T: Scalar>(spec: NetworkSpec, params: &mut ParamSet<T>, prefix: &str, seed: u64) -> Result<Self> {
        Self::check(&spec)?;
        let mut rng = rng_from_seed(seed);
        let pa = if spec.input.uses_pa() {
            Some(PaModule::register(spec.pa, params, &format!("{prefix}.pa"), &mut rng)?)
        } else {
            None
        };
        let backbone = ToyBackbone::register(
            params,
            &format!("{prefix}.backbone"),
            spec.backbone_channels(),
            &spec.widths,
            &mut rng,
        )?;
        let dim = backbone.feature_dim();
        let head = match spec.head {
            HeadKind::Vap { alpha } => Head::Vap(VapHead::register(
                params,
                &format!("{prefix}.vap"),
                spec.segments,
                dim,
                spec.classes,
                alpha,
                &mut rng,
            )?),
            HeadKind::Average => Head::Average(AverageHead::register(
                params,
                &format!("{prefix}.avg"),
                spec.segments,
                dim,
                spec.classes,
                &mut rng,
            )?),
        };
        let arch = Self {
            spec,
            pa,
            backbone,
            head,
        };
        arch.check_wiring()?;
        Ok(arch)
    }

    /// Rebinds to parameters loaded from a checkpoint.
    pub fn bind<T: Scalar>(spec: NetworkSpec, params: &ParamSet<T>, prefix: &str) -> Result<Self> {
        Self::check(&spec)?;
        let pa = if spec.input.uses_pa() {
            Some(PaModule::bind(spec.pa, params, &format!("{prefix}.pa"))?)
        } else {
            None
        };
        let backbone = ToyBackbone::bind(params, &format!("{prefix}.backbone"))?;
        let head = match spec.head {
            HeadKind::Vap { .. } => Head::Vap(VapHead::bind(params, &format!("{prefix}.vap"))?),
            HeadKind::Average => Head::Average(AverageHead::bind(params, &format!("{prefix}.avg"), spec.segments)?),
        };
        let arch = Self {
            spec,
            pa,
            backbone,
            head,
        };
        arch.check_wiring()?;
        Ok(arch)
    }

    fn check(spec: &NetworkSpec) -> Result<()> {
        if spec.stack < 2 {
            return Err(Error::StackTooShort(spec.stack));
        }
        if spec.classes < 2 {
            return Err(invalid("NetworkSpec", "need at least 2 classes"));
        }
        spec.pa.validate()
    }

    fn check_wiring(&self) -> Result<()> {
        if self.backbone.in_channels() != self.spec.backbone_channels() {
            return Err(invalid(
                "Architecture",
                format!(
                    "backbone takes {} channels but {:?} input with m = {} provides {}",
                    self.backbone.in_channels(),
                    self.spec.input,
                    self.spec.stack,
                    self.spec.backbone_channels()
                ),
            ));
        }
        let (classes, dim, segments) = match &self.head {
            Head::Vap(h) => (h.classes, h.dim, h.segments),
            Head::Average(h) => (h.classes, h.dim, h.segments),
        };
        if classes != self.spec.classes || dim != self.backbone.feature_dim() || segments != self.spec.segments {
            return Err(invalid("Architecture", "head dimensions disagree with the network spec"));
        }
        Ok(())
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn backbone(&self) -> &ToyBackbone {
        &self.backbone
    }

    pub fn pa(&self) -> Option<&PaModule> {
        self.pa.as_ref()
    }

    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, clip: &SampledClip<Tensor<T>>) -> Result<NetworkTrace<T>> {
        if clip.stacks.len() != self.spec.segments {
            return Err(invalid(
                "Architecture::forward",
                format!("expected {} stacks, got {}", self.spec.segments, clip.stacks.len()),
            ));
        }
        let mut segments = Vec::with_capacity(clip.stacks.len());
        let mut features = Vec::with_capacity(clip.stacks.len());
        for stack in &clip.stacks {
            if stack.len() != self.spec.stack {
                return Err(Error::StackTooShort(stack.len()));
            }
            let first = &stack[0];
            let pa = match &self.pa {
                Some(m) => Some(m.forward(params, stack)?),
                None => None,
            };
            let x = match self.spec.input {
                BranchInput::Rgb => first.clone(),
                BranchInput::Motion => pa.as_ref().unwrap().encoded.clone(),
                BranchInput::RgbMotion => Tensor::concat_channels(&[first, &pa.as_ref().unwrap().encoded])?,
                BranchInput::RgbStatic => {
                    let zeros = Tensor::zeros(&[self.spec.stack - 1, first.shape()[1], first.shape()[2]]);
                    Tensor::concat_channels(&[first, &zeros])?
                }
            };
            let bb = self.backbone.forward(params, &x)?;
            features.push(bb.features.clone());
            segments.push(SegmentTrace { pa, backbone: bb });
        }
        let f = Tensor::stack(&features)?;
        let head = match &self.head {
            Head::Vap(h) => HeadTrace::Vap(h.forward(params, &f)?),
            Head::Average(h) => {
                let (mean, scores) = h.forward(params, &f)?;
                HeadTrace::Average { mean, scores }
            }
        };
        Ok(NetworkTrace { segments, head })
    }

    /// Accumulates the gradient of every parameter for `grad_scores`.
    pub fn backward<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        trace: &NetworkTrace<T>,
        grad_scores: &Tensor<T>,
    ) -> Result<()> {
        let g_f = match (&self.head, &trace.head) {
            (Head::Vap(h), HeadTrace::Vap(t)) => h.backward(params, t, grad_scores)?,
            (Head::Average(h), HeadTrace::Average { mean, .. }) => h.backward(params, mean, grad_scores)?,
            _ => return Err(invalid("Architecture::backward", "trace from a different head")),
        };
        let motion_start = match self.spec.input {
            BranchInput::Motion => Some(0),
            BranchInput::RgbMotion => Some(3),
            _ => None,
        };
        for (t, seg) in trace.segments.iter().enumerate() {
            let g_feat = Tensor::from_slice(g_f.slab(t));
            let g_x = self
                .backbone
                .backward(params, &seg.backbone, &g_feat, motion_start.is_some())?;
            if let (Some(start), Some(pa), Some(pa_trace), Some(g_x)) = (motion_start, &self.pa, &seg.pa, g_x) {
                let g_enc = g_x.channels(start, self.spec.stack - 1)?;
                pa.backward(params, pa_trace, &g_enc, false)?;
            }
        }
        Ok(())
    }

    /// Cross-entropy loss of one sampled clip; gradients are accumulated into `params`.
    pub fn loss_and_grad<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        clip: &SampledClip<Tensor<T>>,
        label: usize,
    ) -> Result<(T, Tensor<T>)> {
        let trace = self.forward(params, clip)?;
        let (loss, g) = cross_entropy(trace.scores(), label)?;
        self.backward(params, &trace, &g)?;
        Ok((loss, trace.scores().clone()))
    }
}

#[derive(Debug, Clone)]
struct SegmentTrace<T> {
    pa: Option<PaTrace<T>>,
    backbone: BackboneTrace<T>,
}

#[derive(Debug, Clone)]
enum HeadTrace<T> {
    Vap(VapTrace<T>),
    Average { mean: Tensor<T>, scores: Tensor<T> },
}

/// Forward record of [`Architecture::forward`].
#[derive(Debug, Clone)]
pub struct NetworkTrace<T> {
    segments: Vec<SegmentTrace<T>>,
    head: HeadTrace<T>,
}

impl<T: Scalar> NetworkTrace<T> {
    pub fn scores(&self) -> &Tensor<T> {
        match &self.head {
            HeadTrace::Vap(t) => &t.scores,
            HeadTrace::Average { scores, .. } => scores,
        }
    }

    /// VAP timescale weights, absent for the average head.
    pub fn timescale_weights(&self) -> Option<&Tensor<T>> {
        match &self.head {
            HeadTrace::Vap(t) => Some(t.weights()),
            HeadTrace::Average { .. } => None,
        }
    }

    /// Per-segment backbone features, `[N, d]`.
    pub fn segment_features(&self) -> Result<Tensor<T>> {
        Tensor::stack(&self.segments.iter().map(|s| s.backbone.features.clone()).collect::<Vec<_>>())
    }

    /// Backbone input PA maps of segment `t`, when the network computes them.
    pub fn pa_maps(&self, t: usize) -> Option<&[Tensor<T>]> {
        self.segments.get(t)?.pa.as_ref().map(|p| p.pa_maps())
    }
}

/// An architecture with its parameters, under a name prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Network<T = f32> {
    pub arch: Architecture,
    pub params: ParamSet<T>,
    pub prefix: String,
}

impl<T: Scalar> Network<T> {
    pub fn new(spec: NetworkSpec, prefix: &str, seed: u64) -> Result<Self> {
        let mut params = ParamSet::new();
        let arch = Architecture::build(spec, &mut params, prefix, seed)?;
        Ok(Self {
            arch,
            params,
            prefix: prefix.into(),
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        self.arch.spec()
    }

    pub fn forward(&self, clip: &SampledClip<Tensor<T>>) -> Result<NetworkTrace<T>> {
        self.arch.forward(&self.params, clip)
    }

    /// Test-time prediction on a clip (centred sampling).
    pub fn predict(&self, clip: &VideoClip) -> Result<NetworkTrace<T>> {
        let sampled = clip.sample(&self.spec().sampler(SampleMode::TestCenter), 0)?;
        self.forward(&sampled)
    }
}

/// Weighted mean of score vectors; weights must be non-negative and sum to 1.
pub fn fuse_scores<T: Scalar>(scores: &[Tensor<T>], weights: &[T]) -> Result<Tensor<T>> {
    if scores.is_empty() || scores.len() != weights.len() {
        return Err(invalid(
            "fuse_scores",
            format!("{} score vectors but {} weights", scores.len(), weights.len()),
        ));
    }
    let total: T = weights.iter().copied().sum();
    if weights.iter().any(|&w| w < T::ZERO) || (total - T::ONE).abs() > T::from_f64(1e-6) {
        return Err(invalid("fuse_scores", "weights must be non-negative and sum to 1"));
    }
    let mut out = Tensor::zeros(scores[0].shape());
    for (s, &w) in scores.iter().zip(weights) {
        out.axpy(w, s)?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Lite,
    Full,
    Ensemble,
}

/// A trained PAN: the unified Lite network or the two-branch Full network.
#[derive(Debug, Clone, PartialEq)]
pub enum PanModel {
    Lite(Network),
    Full {
        rgb: Network,
        motion: Network,
        /// Fusion weights for (RGB, motion) branch scores.
        fusion: [f32; 2],
    },
}

/// Scores for one clip, with branch details.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Tensor<f32>,
    pub branch_scores: Vec<Tensor<f32>>,
    /// VAP weights of each branch that has a VAP head.
    pub timescale_weights: Vec<Vec<f32>>,
}

impl Prediction {
    pub fn top1(&self) -> usize {
        argmax(self.scores.data())
    }
}

pub fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Anything that maps a clip to class scores.
pub trait Predictor {
    fn classes(&self) -> usize;
    fn predict(&self, clip: &VideoClip) -> Result<Prediction>;
}

fn network_prediction(net: &Network) -> impl Fn(&VideoClip) -> Result<(Tensor<f32>, Option<Vec<f32>>)> + '_ {
    move |clip| {
        let t = net.predict(clip)?;
        Ok((t.scores().clone(), t.timescale_weights().map(|w| w.data().to_vec())))
    }
}

impl PanModel {
    pub fn lite(spec: NetworkSpec, seed: u64) -> Result<Self> {
        if spec.input != BranchInput::RgbMotion && spec.input != BranchInput::RgbStatic {
            return Err(invalid("PanModel::lite", "Lite consumes RGB plus PA channels"));
        }
        Ok(Self::Lite(Network::new(spec, "lite", seed)?))
    }

    /// Two independent branches sharing the sampler geometry of `base`.
    pub fn full(base: NetworkSpec, seed: u64) -> Result<Self> {
        let rgb = NetworkSpec {
            input: BranchInput::Rgb,
            ..base.clone()
        };
        let motion = NetworkSpec {
            input: BranchInput::Motion,
            ..base
        };
        Ok(Self::Full {
            rgb: Network::new(rgb, "rgb", seed)?,
            motion: Network::new(motion, "motion", seed.wrapping_add(1))?,
            fusion: [0.5, 0.5],
        })
    }

    pub fn variant(&self) -> Variant {
        match self {
            Self::Lite(_) => Variant::Lite,
            Self::Full { .. } => Variant::Full,
        }
    }

    pub fn networks(&self) -> Vec<&Network> {
        match self {
            Self::Lite(n) => vec![n],
            Self::Full { rgb, motion, .. } => vec![rgb, motion],
        }
    }

    pub fn networks_mut(&mut self) -> Vec<&mut Network> {
        match self {
            Self::Lite(n) => vec![n],
            Self::Full { rgb, motion, .. } => vec![rgb, motion],
        }
    }
}

impl Predictor for PanModel {
    fn classes(&self) -> usize {
        self.networks()[0].spec().classes
    }

    fn predict(&self, clip: &VideoClip) -> Result<Prediction> {
        match self {
            Self::Lite(n) => {
                let (s, w) = network_prediction(n)(clip)?;
                Ok(Prediction {
                    scores: s.clone(),
                    branch_scores: vec![s],
                    timescale_weights: w.into_iter().collect(),
                })
            }
            Self::Full { rgb, motion, fusion } => {
                let (s_rgb, w_rgb) = network_prediction(rgb)(clip)?;
                let (s_mot, w_mot) = network_prediction(motion)(clip)?;
                let branch_scores = vec![s_rgb, s_mot];
                Ok(Prediction {
                    scores: fuse_scores(&branch_scores, fusion)?,
                    branch_scores,
                    timescale_weights: w_rgb.into_iter().chain(w_mot).collect(),
                })
            }
        }
    }
}

/// Score-level ensemble of several models (equal weights realize PAN_En for Lite + Full).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<PanModel>,
    pub weights: Vec<f32>,
}

impl Ensemble {
    pub fn equal(members: Vec<PanModel>) -> Result<Self> {
        if members.is_empty() {
            return Err(invalid("Ensemble", "no members"));
        }
        let c = members[0].classes();
        if members.iter().any(|m| m.classes() != c) {
            return Err(invalid("Ensemble", "members disagree on the class count"));
        }
        let w = 1.0 / members.len() as f32;
        let weights = vec![w; members.len()];
        Ok(Self { members, weights })
    }
}

impl Predictor for Ensemble {
    fn classes(&self) -> usize {
        self.members[0].classes()
    }

    fn predict(&self, clip: &VideoClip) -> Result<Prediction> {
        let preds = self
            .members
            .iter()
            .map(|m| m.predict(clip))
            .collect::<Result<Vec<_>>>()?;
        let scores: Vec<_> = preds.iter().map(|p| p.scores.clone()).collect();
        let total: f32 = self.weights.iter().sum();
        let weights: Vec<f32> = self.weights.iter().map(|w| w / total).collect();
        Ok(Prediction {
            scores: fuse_scores(&scores, &weights)?,
            branch_scores: scores,
            timescale_weights: preds.into_iter().flat_map(|p| p.timescale_weights).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fusion_cases() {
        let s = Tensor::<f32>::from_slice(&[1.0, -2.0]);
        assert_eq!(fuse_scores(&[s.clone()], &[1.0]).unwrap(), s);
        assert_eq!(fuse_scores(&[s.clone(), s.clone()], &[0.3, 0.7]).unwrap(), s);
        let a = Tensor::<f32>::from_slice(&[1.0, 0.0]);
        let b = Tensor::<f32>::from_slice(&[0.0, 1.0]);
        assert_eq!(fuse_scores(&[a.clone(), b.clone()], &[0.5, 0.5]).unwrap().data(), &[0.5, 0.5]);
        assert_eq!(fuse_scores(&[a.clone(), b.clone()], &[1.0, 0.0]).unwrap(), a);
        assert!(fuse_scores(&[a.clone(), b.clone()], &[1.0]).is_err());
        assert!(fuse_scores(&[a, b], &[0.7, 0.7]).is_err());
    }

    #[test]
    fn lite_backbone_takes_rgb_plus_pa_channels() {
        let spec = NetworkSpec::new(BranchInput::RgbMotion, 4);
        let net = Network::<f32>::new(spec, "lite", 0).unwrap();
        assert_eq!(net.arch.backbone().in_channels(), 6);
    }

    #[test]
    fn miswired_checkpoint_rejected() {
        let spec = NetworkSpec::new(BranchInput::RgbMotion, 4);
        let net = Network::<f32>::new(spec.clone(), "lite", 0).unwrap();
        let other = NetworkSpec { stack: 3, ..spec };
        assert!(Architecture::bind(other, &net.params, "lite").is_err());
    }

    #[test]
    fn spec_codes_round_trip() {
        let mut spec = NetworkSpec::new(BranchInput::Motion, 5);
        spec.pa.encoding = Encoding::Attention;
        spec.head = HeadKind::Average;
        let back = NetworkSpec::from_codes(&spec.to_codes(), spec.widths.clone()).unwrap();
        assert_eq!(back.input, spec.input);
        assert_eq!(back.head, spec.head);
        assert_eq!(back.pa.encoding, spec.pa.encoding);
        assert_eq!(back.classes, 5);
        assert!(NetworkSpec::from_codes(&[1.5; 11], vec![8]).is_err());
    }
}
