//! Persistence of appearance (PA): a single-channel motion map built from the
//! channel-wise L2 norm of differences between low-level feature maps of two
//! adjacent frames, plus the two ways of encoding a stack of PA maps for a
//! downstream backbone.
//!
//! The feature extractor is `depth` stacked convolutions (`channels` filters of
//! size `kernel`, stride 1, same padding) with no activation or normalization.
//! Because the stack is affine, `features(b) − features(a)` equals the
//! bias-free stack applied to `b − a`; [`PaModule::pair`] evaluates that
//! difference route, which needs one convolution pass per pair instead of two.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::init::{fan_in_uniform, rng_from_seed};
use crate::ops;
use crate::param::{ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// How the `m − 1` PA maps of a stack are turned into backbone input channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Encoding {
    /// PA maps concatenated chronologically as an extra input modality.
    MotionCue,
    /// `sigmoid(PA) ⊙ channel_mean(features)` of the earlier frame: PA as spatial attention.
    Attention,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaConfig {
    /// Number of stacked conv layers; 0 takes differences in RGB space.
    pub depth: usize,
    pub channels: usize,
    pub kernel: usize,
    pub eps: f64,
    pub encoding: Encoding,
}

impl Default for PaConfig {
    fn default() -> Self {
        Self {
            depth: 1,
            channels: 8,
            kernel: 7,
            eps: 1e-12,
            encoding: Encoding::MotionCue,
        }
    }
}

impl PaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel % 2 == 0 {
            return Err(invalid("PaConfig", format!("kernel must be odd, got {}", self.kernel)));
        }
        if self.channels == 0 {
            return Err(invalid("PaConfig", "channels must be >= 1"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid("PaConfig", "eps must be positive"));
        }
        Ok(())
    }

    pub fn padding(&self) -> usize {
        (self.kernel - 1) / 2
    }

    /// Channel count of the maps that get differenced.
    pub fn feature_channels(&self) -> usize {
        if self.depth == 0 {
            3
        } else {
            self.channels
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvLayer {
    weight: ParamId,
    bias: ParamId,
}

/// PA feature extractor bound to parameters inside a [`ParamSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct PaModule {
    cfg: PaConfig,
    layers: Vec<ConvLayer>,
}

fn layer_names(prefix: &str, i: usize) -> (String, String) {
    (format!("{prefix}.conv{i}.weight"), format!("{prefix}.conv{i}.bias"))
}

impl PaModule {
    /// Registers freshly initialized conv weights (`prefix.conv{i}.weight`,
    /// `prefix.conv{i}.bias`) for RGB input.
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        cfg: PaConfig,
        params: &mut ParamSet<T>,
        prefix: &str,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let c_in = if i == 0 { 3 } else { cfg.channels };
            let (wn, bn) = layer_names(prefix, i);
            let weight = params.register(wn, fan_in_uniform(&[cfg.channels, c_in, cfg.kernel, cfg.kernel], 1.0, rng))?;
            let bias = params.register(bn, Tensor::zeros(&[cfg.channels]))?;
            layers.push(ConvLayer { weight, bias });
        }
        Ok(Self { cfg, layers })
    }

    /// Looks up existing parameters registered under `prefix`, checking shapes.
    pub fn bind<T: Scalar>(cfg: PaConfig, params: &ParamSet<T>, prefix: &str) -> Result<Self> {
        cfg.validate()?;
        let mut layers = Vec::with_capacity(cfg.depth);
        for i in 0..cfg.depth {
            let c_in = if i == 0 { 3 } else { cfg.channels };
            let (wn, bn) = layer_names(prefix, i);
            let weight = params.id(&wn)?;
            let bias = params.id(&bn)?;
            let want = [cfg.channels, c_in, cfg.kernel, cfg.kernel];
            if params.value(weight).shape() != want || params.value(bias).shape() != [cfg.channels] {
                return Err(Error::ShapeMismatch {
                    op: "PaModule::bind",
                    left: want.to_vec(),
                    right: params.value(weight).shape().to_vec(),
                });
            }
            layers.push(ConvLayer { weight, bias });
        }
        Ok(Self { cfg, layers })
    }

    pub fn config(&self) -> &PaConfig {
        &self.cfg
    }

    /// Runs the conv stack, returning every layer input followed by the output.
    fn run_layers<T: Scalar>(&self, params: &ParamSet<T>, input: Tensor<T>, with_bias: bool) -> Result<Vec<Tensor<T>>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for l in &self.layers {
            let bias = with_bias.then(|| params.value(l.bias));
            let next = ops::conv2d(acts.last().unwrap(), params.value(l.weight), bias, 1, self.cfg.padding())?;
            acts.push(next);
        }
        Ok(acts)
    }

    /// Backpropagates through the conv stack; returns the gradient of the stack input if requested.
    fn backprop_layers<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        acts: &[Tensor<T>],
        grad_out: Tensor<T>,
        with_bias: bool,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let mut grad = grad_out;
        for (i, l) in self.layers.iter().enumerate().rev() {
            let g = ops::conv2d_backward(
                &acts[i],
                params.value(l.weight),
                &grad,
                1,
                self.cfg.padding(),
                i > 0 || need_input,
            )?;
            params.accumulate(l.weight, &g.weight)?;
            if with_bias {
                params.accumulate(l.bias, &g.bias)?;
            }
            match g.input {
                Some(gi) => grad = gi,
                None => return Ok(None),
            }
        }
        Ok(Some(grad))
    }

    fn check_frame<T: Scalar>(frame: &Tensor<T>) -> Result<()> {
        if frame.rank() != 3 || frame.shape()[0] != 3 {
            return Err(invalid("pa", format!("frames must be [3, H, W], got {:?}", frame.shape())));
        }
        Ok(())
    }

    /// Low-level feature maps `[C, H, W]` of one RGB frame (requires `depth >= 1`).
    pub fn features<T: Scalar>(&self, params: &ParamSet<T>, frame: &Tensor<T>) -> Result<Tensor<T>> {
        if self.cfg.depth == 0 {
            return Err(invalid("low_level_features", "depth 0 has no feature layers"));
        }
        Self::check_frame(frame)?;
        Ok(self.run_layers(params, frame.clone(), true)?.pop().unwrap())
    }

    /// Maps compared by PA: the features for `depth >= 1`, the frame itself otherwise.
    fn comparable<T: Scalar>(&self, params: &ParamSet<T>, frame: &Tensor<T>) -> Result<Tensor<T>> {
        if self.cfg.depth == 0 {
            Self::check_frame(frame)?;
            Ok(frame.clone())
        } else {
            self.features(params, frame)
        }
    }

    /// Image-space difference propagated through the bias-free conv stack.
    fn difference_features<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        earlier: &Tensor<T>,
        later: &Tensor<T>,
    ) -> Result<Vec<Tensor<T>>> {
        Self::check_frame(earlier)?;
        Self::check_frame(later)?;
        let diff = ops::sub(later, earlier)?;
        self.run_layers(params, diff, false)
    }

    /// PA map `[1, H, W]` between two adjacent frames.
    pub fn pair<T: Scalar>(&self, params: &ParamSet<T>, earlier: &Tensor<T>, later: &Tensor<T>) -> Result<Tensor<T>> {
        let d = self.difference_features(params, earlier, later)?;
        ops::channel_l2(d.last().unwrap(), T::from_f64(self.cfg.eps))
    }

    /// PA map computed the long way, `channel_l2(features(later) − features(earlier))`.
    /// Agrees with [`PaModule::pair`] up to rounding.
    pub fn pair_via_features<T: Scalar>(
        &self,
        params: &ParamSet<T>,
        earlier: &Tensor<T>,
        later: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let fa = self.comparable(params, earlier)?;
        let fb = self.comparable(params, later)?;
        ops::channel_l2(&ops::sub(&fb, &fa)?, T::from_f64(self.cfg.eps))
    }

    /// All `m − 1` adjacent-pair PA maps of an `m`-frame stack.
    pub fn stack<T: Scalar>(&self, params: &ParamSet<T>, frames: &[Tensor<T>]) -> Result<PaStack<T>> {
        if frames.len() < 2 {
            return Err(Error::StackTooShort(frames.len()));
        }
        let pa_maps = frames
            .windows(2)
            .map(|w| self.pair(params, &w[0], &w[1]))
            .collect::<Result<Vec<_>>>()?;
        let features = match self.cfg.encoding {
            Encoding::Attention => Some(
                frames
                    .iter()
                    .map(|f| self.comparable(params, f))
                    .collect::<Result<Vec<_>>>()?,
            ),
            Encoding::MotionCue => None,
        };
        Ok(PaStack { pa_maps, features })
    }

    /// Forward pass over one stack that records what [`PaModule::backward`] needs.
    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, frames: &[Tensor<T>]) -> Result<PaTrace<T>> {
        if frames.len() < 2 {
            return Err(Error::StackTooShort(frames.len()));
        }
        let eps = T::from_f64(self.cfg.eps);
        let mut diff_acts = Vec::with_capacity(frames.len() - 1);
        let mut pa_maps = Vec::with_capacity(frames.len() - 1);
        for w in frames.windows(2) {
            let acts = self.difference_features(params, &w[0], &w[1])?;
            pa_maps.push(ops::channel_l2(acts.last().unwrap(), eps)?);
            diff_acts.push(acts);
        }
        let (encoded, attention) = match self.cfg.encoding {
            Encoding::MotionCue => (Tensor::concat_channels(&pa_maps.iter().collect::<Vec<_>>())?, None),
            Encoding::Attention => {
                let mut parts = Vec::with_capacity(pa_maps.len());
                let mut traces = Vec::with_capacity(pa_maps.len());
                for (frame, pa) in frames.iter().zip(&pa_maps) {
                    Self::check_frame(frame)?;
                    let acts = self.run_layers(params, frame.clone(), true)?;
                    let mean = ops::channel_mean(acts.last().unwrap())?;
                    let gate = ops::sigmoid(pa);
                    parts.push(ops::mul(&gate, &mean)?);
                    traces.push(AttentionTrace { acts, mean, gate });
                }
                (Tensor::concat_channels(&parts.iter().collect::<Vec<_>>())?, Some(traces))
            }
        };
        Ok(PaTrace {
            diff_acts,
            pa_maps,
            attention,
            encoded,
        })
    }

    /// Accumulates parameter gradients for `grad_encoded` (shaped like
    /// `trace.encoded`). Returns per-frame gradients when `need_frames` is set.
    pub fn backward<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        trace: &PaTrace<T>,
        grad_encoded: &Tensor<T>,
        need_frames: bool,
    ) -> Result<Option<Vec<Tensor<T>>>> {
        trace.encoded.check_same("PaModule::backward", grad_encoded)?;
        let pairs = trace.pa_maps.len();
        let mut frame_grads: Option<Vec<Tensor<T>>> =
            need_frames.then(|| (0..=pairs).map(|_| Tensor::zeros(trace.diff_acts[0][0].shape())).collect());
        for i in 0..pairs {
            let g_out = grad_encoded.channels(i, 1)?;
            let pa = &trace.pa_maps[i];
            let g_pa = match &trace.attention {
                None => g_out,
                Some(att) => {
                    let a = &att[i];
                    let (g_gate, g_mean) = ops::mul_backward(&a.gate, &a.mean, &g_out)?;
                    let feats = a.acts.last().unwrap();
                    let g_feat = ops::channel_mean_backward(feats.shape(), &g_mean)?;
                    if let Some(g_frame) = self.backprop_layers(params, &a.acts, g_feat, true, need_frames)? {
                        if let Some(fg) = frame_grads.as_mut() {
                            fg[i].add_assign(&g_frame)?;
                        }
                    }
                    ops::sigmoid_backward(&a.gate, &g_gate)?
                }
            };
            let acts = &trace.diff_acts[i];
            let g_diff_out = ops::channel_l2_backward(acts.last().unwrap(), pa, &g_pa)?;
            if let Some(g_diff) = self.backprop_layers(params, acts, g_diff_out, false, need_frames)? {
                if let Some(fg) = frame_grads.as_mut() {
                    fg[i + 1].add_assign(&g_diff)?;
                    fg[i].axpy(-T::ONE, &g_diff)?;
                }
            }
        }
        Ok(frame_grads)
    }
}

#[derive(Debug, Clone)]
struct AttentionTrace<T> {
    acts: Vec<Tensor<T>>,
    mean: Tensor<T>,
    gate: Tensor<T>,
}

/// Forward record of one stack, produced by [`PaModule::forward`].
#[derive(Debug, Clone)]
pub struct PaTrace<T> {
    diff_acts: Vec<Vec<Tensor<T>>>,
    pa_maps: Vec<Tensor<T>>,
    attention: Option<Vec<AttentionTrace<T>>>,
    /// Encoded stack, `[m − 1, H, W]`.
    pub encoded: Tensor<T>,
}

impl<T> PaTrace<T> {
    pub fn pa_maps(&self) -> &[Tensor<T>] {
        &self.pa_maps
    }
}

/// PA maps of one `m`-frame stack, plus the per-frame feature maps when the
/// attention encoding needs them.
#[derive(Debug, Clone, PartialEq)]
pub struct PaStack<T = f32> {
    pub pa_maps: Vec<Tensor<T>>,
    pub features: Option<Vec<Tensor<T>>>,
}

/// Chronological channel concatenation of the PA maps: `[m − 1, H, W]`.
pub fn encode_motion_cue<T: Scalar>(stack: &PaStack<T>) -> Result<Tensor<T>> {
    Tensor::concat_channels(&stack.pa_maps.iter().collect::<Vec<_>>())
}

/// Channel `i` is `sigmoid(pa_i) ⊙ channel_mean(features_i)`, with `features_i`
/// taken from the earlier frame of pair `i`.
pub fn encode_attention<T: Scalar>(stack: &PaStack<T>) -> Result<Tensor<T>> {
    let feats = stack.features.as_ref().ok_or(Error::MissingFeatures)?;
    if feats.len() < stack.pa_maps.len() {
        return Err(Error::MissingFeatures);
    }
    let parts = stack
        .pa_maps
        .iter()
        .zip(feats)
        .map(|(pa, f)| ops::mul(&ops::sigmoid(pa), &ops::channel_mean(f)?))
        .collect::<Result<Vec<_>>>()?;
    Tensor::concat_channels(&parts.iter().collect::<Vec<_>>())
}

pub fn encode<T: Scalar>(stack: &PaStack<T>, encoding: Encoding) -> Result<Tensor<T>> {
    match encoding {
        Encoding::MotionCue => encode_motion_cue(stack),
        Encoding::Attention => encode_attention(stack),
    }
}

/// Fresh PA weights in their own parameter set, registered under `pa`.
pub fn init_pa_weights<T: Scalar>(cfg: PaConfig, seed: u64) -> Result<(PaModule, ParamSet<T>)> {
    let mut params = ParamSet::new();
    let module = PaModule::register(cfg, &mut params, "pa", &mut rng_from_seed(seed))?;
    Ok((module, params))
}

/// Analytic floating-point operation count for `n_stacks` stacks of `m` frames
/// at `h × w`.
///
/// Conv layers count two operations per multiply-add plus the bias add, for
/// every frame. Each of the `m − 1` pairs then costs, per pixel, a difference,
/// a square and an accumulate per feature channel and one square root. The
/// attention encoding adds a sigmoid (4 ops), the channel mean (`C` ops) and a
/// multiply per pixel and pair.
pub fn estimate_flops(cfg: &PaConfig, h: usize, w: usize, n_stacks: usize, m: usize) -> f64 {
    let pixels = (h * w) as f64;
    let k2 = (cfg.kernel * cfg.kernel) as f64;
    let c = cfg.channels as f64;
    let mut conv_per_frame = 0.0;
    for i in 0..cfg.depth {
        let c_in = if i == 0 { 3.0 } else { c };
        conv_per_frame += (2.0 * c_in * k2 + 1.0) * c * pixels;
    }
    let fc = cfg.feature_channels() as f64;
    let pairs = m.saturating_sub(1) as f64;
    let mut per_pair = (3.0 * fc + 1.0) * pixels;
    if cfg.encoding == Encoding::Attention {
        per_pair += (4.0 + fc + 1.0) * pixels;
    }
    n_stacks as f64 * (m as f64 * conv_per_frame + pairs * per_pair)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seed: u64, h: usize, w: usize) -> Tensor<f64> {
        let mut rng = rng_from_seed(seed);
        Tensor::from_fn(&[3, h, w], |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn parameter_count_matches_single_layer_module() {
        let (_, p) = init_pa_weights::<f32>(PaConfig::default(), 0).unwrap();
        assert_eq!(p.num_scalars(), 3 * 7 * 7 * 8 + 8);
        assert_eq!(p.num_scalars(), 1184);
    }

    #[test]
    fn depth_zero_has_no_params() {
        let cfg = PaConfig { depth: 0, ..PaConfig::default() };
        let (m, p) = init_pa_weights::<f32>(cfg, 0).unwrap();
        assert!(p.is_empty());
        assert!(m.features(&p, &Tensor::zeros(&[3, 4, 4])).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let (_, a) = init_pa_weights::<f32>(PaConfig::default(), 9).unwrap();
        let (_, b) = init_pa_weights::<f32>(PaConfig::default(), 9).unwrap();
        let (_, c) = init_pa_weights::<f32>(PaConfig::default(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn features_keep_resolution_and_zero_maps_to_zero() {
        let (m, p) = init_pa_weights::<f64>(PaConfig::default(), 1).unwrap();
        let f = m.features(&p, &frame(0, 12, 9)).unwrap();
        assert_eq!(f.shape(), &[8, 12, 9]);
        let z = m.features(&p, &Tensor::zeros(&[3, 12, 9])).unwrap();
        assert_eq!(z.max_abs(), 0.0);
    }

    #[test]
    fn identical_frames_give_sqrt_eps() {
        let (m, p) = init_pa_weights::<f64>(PaConfig::default(), 1).unwrap();
        let a = frame(3, 10, 10);
        let pa = m.pair(&p, &a, &a).unwrap();
        assert!(pa.data().iter().all(|&v| v == 1e-6));
    }

    #[test]
    fn difference_route_matches_feature_route() {
        let (m, mut p) = init_pa_weights::<f64>(PaConfig { depth: 2, ..PaConfig::default() }, 4).unwrap();
        for prm in p.iter_mut() {
            if prm.name.ends_with("bias") {
                prm.value.fill(0.3);
            }
        }
        let (a, b) = (frame(5, 11, 13), frame(6, 11, 13));
        let fast = m.pair(&p, &a, &b).unwrap();
        let slow = m.pair_via_features(&p, &a, &b).unwrap();
        for (x, y) in fast.data().iter().zip(slow.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn stack_counts_and_short_stack_rejected() {
        let (m, p) = init_pa_weights::<f64>(PaConfig::default(), 1).unwrap();
        let frames: Vec<_> = (0..4).map(|s| frame(s, 8, 8)).collect();
        let st = m.stack(&p, &frames).unwrap();
        assert_eq!(st.pa_maps.len(), 3);
        assert!(st.features.is_none());
        assert_eq!(encode_motion_cue(&st).unwrap().shape(), &[3, 8, 8]);
        assert_eq!(encode_attention(&st).unwrap_err(), Error::MissingFeatures);
        assert_eq!(m.stack(&p, &frames[..1]).unwrap_err(), Error::StackTooShort(1));
        assert_eq!(m.stack(&p, &frames[..2]).unwrap().pa_maps.len(), 1);
    }

    #[test]
    fn attention_of_static_stack_is_half_mean() {
        let cfg = PaConfig { encoding: Encoding::Attention, ..PaConfig::default() };
        let (m, p) = init_pa_weights::<f64>(cfg, 2).unwrap();
        let a = frame(1, 8, 8);
        let st = m.stack(&p, &[a.clone(), a.clone(), a.clone(), a.clone()]).unwrap();
        let enc = encode_attention(&st).unwrap();
        assert_eq!(enc.shape(), &[3, 8, 8]);
        let mean = ops::channel_mean(&m.features(&p, &a).unwrap()).unwrap();
        for ch in 0..3 {
            for (x, y) in enc.slab(ch).iter().zip(mean.data()) {
                assert!((x - 0.5 * y).abs() < 1e-6);
            }
        }
        let zero = Tensor::zeros(&[3, 8, 8]);
        let st = m.stack(&p, &[zero.clone(), zero.clone()]).unwrap();
        assert_eq!(encode_attention(&st).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn traced_forward_matches_stack() {
        for enc in [Encoding::MotionCue, Encoding::Attention] {
            let cfg = PaConfig { encoding: enc, ..PaConfig::default() };
            let (m, p) = init_pa_weights::<f64>(cfg, 2).unwrap();
            let frames: Vec<_> = (0..3).map(|s| frame(s + 20, 9, 7)).collect();
            let t = m.forward(&p, &frames).unwrap();
            let e = encode(&m.stack(&p, &frames).unwrap(), enc).unwrap();
            assert_eq!(t.encoded, e);
        }
    }

    #[test]
    fn flops_ordering_and_scaling() {
        let e1 = PaConfig::default();
        let e2 = PaConfig { encoding: Encoding::Attention, ..e1 };
        assert!(estimate_flops(&e2, 224, 224, 8, 4) > estimate_flops(&e1, 224, 224, 8, 4));
        let a = estimate_flops(&e1, 112, 64, 8, 4);
        assert_eq!(estimate_flops(&e1, 224, 64, 8, 4), 2.0 * a);
        let d0 = PaConfig { depth: 0, ..e1 };
        assert_eq!(estimate_flops(&d0, 10, 10, 1, 2), 10.0 * 100.0);
    }
}
