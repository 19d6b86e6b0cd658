use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::init::fan_in_uniform;
use crate::ops::{self, MaxPool2d};
use crate::param::{ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Stage widths of the default backbone; the last one is the feature dimension.
pub const DEFAULT_WIDTHS: [usize; 3] = [16, 32, 64];

/// Small frame-level CNN: `stages × (conv3x3 → relu → maxpool 2x2)` followed by
/// global average pooling, mapping `[C_in, H, W]` to a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyBackbone {
    in_channels: usize,
    stages: Vec<(ParamId, ParamId)>,
    widths: Vec<usize>,
}

impl ToyBackbone {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        prefix: &str,
        in_channels: usize,
        widths: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        if in_channels == 0 || widths.is_empty() || widths.contains(&0) {
            return Err(invalid("ToyBackbone", "channel counts must be >= 1"));
        }
        let mut stages = Vec::with_capacity(widths.len());
        let mut c_in = in_channels;
        for (i, &c_out) in widths.iter().enumerate() {
            let w = params.register(
                format!("{prefix}.conv{i}.weight"),
                fan_in_uniform(&[c_out, c_in, 3, 3], core::f64::consts::SQRT_2, rng),
            )?;
            let b = params.register(format!("{prefix}.conv{i}.bias"), Tensor::zeros(&[c_out]))?;
            stages.push((w, b));
            c_in = c_out;
        }
        Ok(Self {
            in_channels,
            stages,
            widths: widths.to_vec(),
        })
    }

    /// Binds to `prefix.conv{i}.*` parameters already present, reading the widths from their shapes.
    pub fn bind<T: Scalar>(params: &ParamSet<T>, prefix: &str) -> Result<Self> {
        let mut stages = Vec::new();
        let mut widths = Vec::new();
        let mut in_channels = 0;
        while let Some(w) = params.find(&format!("{prefix}.conv{}.weight", stages.len())) {
            let b = params.id(&format!("{prefix}.conv{}.bias", stages.len()))?;
            let s = params.value(w).shape();
            let expected_in = widths.last().copied().unwrap_or(s.get(1).copied().unwrap_or(0));
            if s.len() != 4 || s[1] != expected_in || s[2] != 3 || s[3] != 3 || params.value(b).shape() != [s[0]] {
                return Err(invalid("ToyBackbone::bind", format!("unexpected stage shape {s:?}")));
            }
            if stages.is_empty() {
                in_channels = s[1];
            }
            widths.push(s[0]);
            stages.push((w, b));
        }
        if stages.is_empty() {
            return Err(Error::UnknownParam(format!("{prefix}.conv0.weight")));
        }
        Ok(Self {
            in_channels,
            stages,
            widths,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn feature_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, x: &Tensor<T>) -> Result<BackboneTrace<T>> {
        if x.rank() != 3 || x.shape()[0] != self.in_channels {
            return Err(Error::ShapeMismatch {
                op: "ToyBackbone::forward",
                left: alloc::vec![self.in_channels],
                right: x.shape().to_vec(),
            });
        }
        let mut stages = Vec::with_capacity(self.stages.len());
        let mut cur = x.clone();
        for &(w, b) in &self.stages {
            let pre = ops::conv2d(&cur, params.value(w), Some(params.value(b)), 1, 1)?;
            let pooled = ops::maxpool2d(&ops::relu(&pre))?;
            let next = pooled.output.clone();
            stages.push(StageTrace {
                input: cur,
                pre,
                pooled,
            });
            cur = next;
        }
        let features = ops::global_avg_pool(&cur)?;
        Ok(BackboneTrace {
            stages,
            last_shape: cur.shape().to_vec(),
            features,
        })
    }

    /// Accumulates parameter gradients; returns the input gradient if `need_input`.
    pub fn backward<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        trace: &BackboneTrace<T>,
        grad_features: &Tensor<T>,
        need_input: bool,
    ) -> Result<Option<Tensor<T>>> {
        let mut grad = ops::global_avg_pool_backward(&trace.last_shape, grad_features)?;
        for (i, (&(w, b), st)) in self.stages.iter().zip(&trace.stages).enumerate().rev() {
            let g_relu = ops::maxpool2d_backward(&st.pooled, &grad)?;
            let g_pre = ops::relu_backward(&st.pre, &g_relu)?;
            let g = ops::conv2d_backward(&st.input, params.value(w), &g_pre, 1, 1, i > 0 || need_input)?;
            params.accumulate(w, &g.weight)?;
            params.accumulate(b, &g.bias)?;
            match g.input {
                Some(gi) => grad = gi,
                None => return Ok(None),
            }
        }
        Ok(Some(grad))
    }
}

#[derive(Debug, Clone)]
struct StageTrace<T> {
    input: Tensor<T>,
    pre: Tensor<T>,
    pooled: MaxPool2d<T>,
}

#[derive(Debug, Clone)]
pub struct BackboneTrace<T> {
    stages: Vec<StageTrace<T>>,
    last_shape: Vec<usize>,
    pub features: Tensor<T>,
}
