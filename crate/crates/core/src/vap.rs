//! Various-timescale aggregation pooling (VAP) and the plain temporal-average
//! baseline head.
//!
//! For `N` frame features `f ∈ R^{N×d}` (N a power of two) the `k`-timescale
//! pooling is a dilated max pool with kernel `N/k`, stride 1 and dilation `k`,
//! producing `k` rows, one per residue class of frame indices mod `k`. With
//! `k = 1, 2, …, N/2` the rows stack into `v ∈ R^{(N−1)×d}`. Each row is
//! shrunk to its feature mean, a two-layer perceptron with a softmax turns
//! those means into timescale weights `w`, and the prediction is
//! `W3 · Σ_t w_t v_t`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid, Error, Result};
use crate::init::fan_in_uniform;
use crate::ops::{self, MaxPoolTime};
use crate::param::{ParamId, ParamSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One pooled row: timescale `k` and residue offset `0 <= offset < k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timescale {
    pub k: usize,
    pub offset: usize,
}

/// Pooled timescale features `v` (`[T, d]`) and their row layout.
#[derive(Debug, Clone)]
pub struct TimescaleBank<T = f32> {
    pub v: Tensor<T>,
    pub scales: Vec<Timescale>,
    pub n: usize,
    pools: Vec<MaxPoolTime<T>>,
}

pub fn is_pyramid_length(n: usize) -> bool {
    n >= 2 && n.is_power_of_two()
}

/// Pyramidal timescale pooling of `f: [N, d]`, rows in ascending `k`.
pub fn timescale_pool<T: Scalar>(f: &Tensor<T>) -> Result<TimescaleBank<T>> {
    if f.rank() != 2 {
        return Err(invalid("timescale_pool", format!("expected [N, d], got {:?}", f.shape())));
    }
    let (n, d) = (f.shape()[0], f.shape()[1]);
    if !is_pyramid_length(n) {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut rows = Vec::with_capacity((n - 1) * d);
    let mut scales = Vec::with_capacity(n - 1);
    let mut pools = Vec::new();
    let mut k = 1;
    while k < n {
        let p = ops::dilated_maxpool_time(f, n / k, 1, k)?;
        debug_assert_eq!(p.output.shape()[0], k);
        rows.extend_from_slice(p.output.data());
        scales.extend((0..k).map(|offset| Timescale { k, offset }));
        pools.push(p);
        k *= 2;
    }
    Ok(TimescaleBank {
        v: Tensor::new(&[n - 1, d], rows)?,
        scales,
        n,
        pools,
    })
}

impl<T: Scalar> TimescaleBank<T> {
    pub fn rows(&self) -> usize {
        self.v.shape()[0]
    }

    /// Gradient with respect to the source features for a gradient on `v`.
    pub fn backward(&self, grad_v: &Tensor<T>) -> Result<Tensor<T>> {
        self.v.check_same("TimescaleBank::backward", grad_v)?;
        let d = self.v.shape()[1];
        let mut grad = Tensor::zeros(&[self.n, d]);
        let mut row = 0;
        for p in &self.pools {
            let k = p.output.shape()[0];
            let g = Tensor::new(&[k, d], grad_v.data()[row * d..(row + k) * d].to_vec())?;
            grad.add_assign(&ops::dilated_maxpool_time_backward(p, &g)?)?;
            row += k;
        }
        Ok(grad)
    }
}

/// Timescale descriptor `z_t = mean_i v[t, i]`, shaped `[T, 1]`.
pub fn shrink<T: Scalar>(bank: &TimescaleBank<T>) -> Tensor<T> {
    let (t, d) = (bank.v.shape()[0], bank.v.shape()[1]);
    let inv = T::ONE / T::from_usize(d);
    Tensor::from_fn(&[t, 1], |r| bank.v.slab(r).iter().copied().sum::<T>() * inv)
}

/// `f_g = Σ_t w_t · v[t, :]`.
pub fn aggregate<T: Scalar>(w: &Tensor<T>, bank: &TimescaleBank<T>) -> Result<Tensor<T>> {
    let (t, d) = (bank.v.shape()[0], bank.v.shape()[1]);
    if w.len() != t {
        return Err(Error::ShapeMismatch {
            op: "aggregate",
            left: w.shape().to_vec(),
            right: bank.v.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(&[d]);
    for (r, &wt) in w.data().iter().enumerate() {
        ops::axpy(out.data_mut(), wt, bank.v.slab(r));
    }
    Ok(out)
}

/// Parameters of the weight-perception network and the classifier, as ids
/// into a [`ParamSet`]: `w1: [αT, T]`, `b1: [αT]`, `w2: [T, αT]`, `b2: [T]`,
/// `w3: [c, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VapHead {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub w3: ParamId,
    pub alpha: usize,
    pub segments: usize,
    pub dim: usize,
    pub classes: usize,
}

pub const DEFAULT_ALPHA: usize = 4;

impl VapHead {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        prefix: &str,
        segments: usize,
        dim: usize,
        classes: usize,
        alpha: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if !is_pyramid_length(segments) {
            return Err(Error::NotPowerOfTwo(segments));
        }
        if classes < 2 || alpha == 0 || dim == 0 {
            return Err(invalid("VapHead", "need classes >= 2, alpha >= 1, dim >= 1"));
        }
        let t = segments - 1;
        let h = alpha * t;
        let w1 = params.register(format!("{prefix}.w1"), fan_in_uniform(&[h, t], 1.0, rng))?;
        let b1 = params.register(format!("{prefix}.b1"), Tensor::zeros(&[h]))?;
        let w2 = params.register(format!("{prefix}.w2"), fan_in_uniform(&[t, h], 1.0, rng))?;
        let b2 = params.register(format!("{prefix}.b2"), Tensor::zeros(&[t]))?;
        let w3 = params.register(format!("{prefix}.w3"), fan_in_uniform(&[classes, dim], 1.0, rng))?;
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            w3,
            alpha,
            segments,
            dim,
            classes,
        })
    }

    /// Binds to existing parameters, recovering the dimensions from their shapes.
    pub fn bind<T: Scalar>(params: &ParamSet<T>, prefix: &str) -> Result<Self> {
        let id = |s: &str| params.id(&format!("{prefix}.{s}"));
        let (w1, b1, w2, b2, w3) = (id("w1")?, id("b1")?, id("w2")?, id("b2")?, id("w3")?);
        let s1 = params.value(w1).shape();
        let s3 = params.value(w3).shape();
        if s1.len() != 2 || s3.len() != 2 || s1[0] % s1[1] != 0 {
            return Err(invalid("VapHead::bind", format!("bad shapes {s1:?}, {s3:?}")));
        }
        let (t, h) = (s1[1], s1[0]);
        let head = Self {
            w1,
            b1,
            w2,
            b2,
            w3,
            alpha: h / t,
            segments: t + 1,
            dim: s3[1],
            classes: s3[0],
        };
        let ok = params.value(b1).shape() == [h]
            && params.value(w2).shape() == [t, h]
            && params.value(b2).shape() == [t]
            && is_pyramid_length(head.segments);
        if !ok {
            return Err(invalid("VapHead::bind", "inconsistent weight-perception shapes"));
        }
        Ok(head)
    }

    pub fn hidden(&self) -> usize {
        self.alpha * (self.segments - 1)
    }

    /// `w = softmax(W2 · relu(W1 · z + b1) + b2)`, shaped `[T, 1]`.
    pub fn weight_perception<T: Scalar>(&self, params: &ParamSet<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.perceive(params, z)?.w)
    }

    fn perceive<T: Scalar>(&self, params: &ParamSet<T>, z: &Tensor<T>) -> Result<Perception<T>> {
        let t = z.len();
        let z = z.clone().reshape(&[t])?;
        let pre = ops::fc(&z, params.value(self.w1), Some(params.value(self.b1)))?;
        let hidden = ops::relu(&pre);
        let logits = ops::fc(&hidden, params.value(self.w2), Some(params.value(self.b2)))?;
        let w = ops::softmax(&logits).reshape(&[t, 1])?;
        Ok(Perception { z, pre, hidden, w })
    }

    /// `s = W3 · f_g` (no bias).
    pub fn predict<T: Scalar>(&self, params: &ParamSet<T>, f_g: &Tensor<T>) -> Result<Tensor<T>> {
        ops::fc(f_g, params.value(self.w3), None)
    }

    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, f: &Tensor<T>) -> Result<VapTrace<T>> {
        if f.rank() != 2 || f.shape() != [self.segments, self.dim] {
            return Err(Error::ShapeMismatch {
                op: "vap_forward",
                left: alloc::vec![self.segments, self.dim],
                right: f.shape().to_vec(),
            });
        }
        let bank = timescale_pool(f)?;
        let z = shrink(&bank);
        let perception = self.perceive(params, &z)?;
        let f_g = aggregate(&perception.w, &bank)?;
        let scores = self.predict(params, &f_g)?;
        Ok(VapTrace {
            bank,
            perception,
            f_g,
            scores,
        })
    }

    /// Accumulates parameter gradients and returns the gradient on `f`.
    pub fn backward<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        trace: &VapTrace<T>,
        grad_scores: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let g3 = ops::fc_backward(&trace.f_g, params.value(self.w3), grad_scores)?;
        params.accumulate(self.w3, &g3.weight)?;
        let g_fg = g3.input;

        let bank = &trace.bank;
        let p = &trace.perception;
        let (t, d) = (bank.v.shape()[0], bank.v.shape()[1]);
        // f_g = Σ_t w_t v_t
        let mut g_v = Tensor::zeros(&[t, d]);
        let mut g_w = Tensor::zeros(&[t]);
        for r in 0..t {
            let wt = p.w.data()[r];
            ops::axpy(g_v.slab_mut(r), wt, g_fg.data());
            g_w.data_mut()[r] = ops::dot(bank.v.slab(r), g_fg.data());
        }
        let w_flat = p.w.clone().reshape(&[t])?;
        let g_logits = ops::softmax_backward(&w_flat, &g_w)?;
        let g2 = ops::fc_backward(&p.hidden, params.value(self.w2), &g_logits)?;
        params.accumulate(self.w2, &g2.weight)?;
        params.accumulate(self.b2, &g2.bias)?;
        let g_pre = ops::relu_backward(&p.pre, &g2.input)?;
        let g1 = ops::fc_backward(&p.z, params.value(self.w1), &g_pre)?;
        params.accumulate(self.w1, &g1.weight)?;
        params.accumulate(self.b1, &g1.bias)?;
        // z_t = mean_i v[t, i]
        let inv = T::ONE / T::from_usize(d);
        for r in 0..t {
            let gz = g1.input.data()[r] * inv;
            g_v.slab_mut(r).iter_mut().for_each(|g| *g += gz);
        }
        bank.backward(&g_v)
    }
}

#[derive(Debug, Clone)]
struct Perception<T> {
    z: Tensor<T>,
    pre: Tensor<T>,
    hidden: Tensor<T>,
    w: Tensor<T>,
}

/// Forward record of [`VapHead::forward`].
#[derive(Debug, Clone)]
pub struct VapTrace<T> {
    pub bank: TimescaleBank<T>,
    perception: Perception<T>,
    pub f_g: Tensor<T>,
    pub scores: Tensor<T>,
}

impl<T: Scalar> VapTrace<T> {
    /// Timescale weights `w`, `[T, 1]`.
    pub fn weights(&self) -> &Tensor<T> {
        &self.perception.w
    }
}

/// Temporal-average baseline: `s = W3 · mean_t f_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AverageHead {
    pub w3: ParamId,
    pub segments: usize,
    pub dim: usize,
    pub classes: usize,
}

impl AverageHead {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        prefix: &str,
        segments: usize,
        dim: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if classes < 2 || segments == 0 || dim == 0 {
            return Err(invalid("AverageHead", "need classes >= 2, segments >= 1, dim >= 1"));
        }
        let w3 = params.register(format!("{prefix}.w3"), fan_in_uniform(&[classes, dim], 1.0, rng))?;
        Ok(Self {
            w3,
            segments,
            dim,
            classes,
        })
    }

    pub fn bind<T: Scalar>(params: &ParamSet<T>, prefix: &str, segments: usize) -> Result<Self> {
        let w3 = params.id(&format!("{prefix}.w3"))?;
        let s = params.value(w3).shape();
        if s.len() != 2 {
            return Err(invalid("AverageHead::bind", format!("bad shape {s:?}")));
        }
        Ok(Self {
            w3,
            segments,
            dim: s[1],
            classes: s[0],
        })
    }

    pub fn forward<T: Scalar>(&self, params: &ParamSet<T>, f: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        if f.shape() != [self.segments, self.dim] {
            return Err(Error::ShapeMismatch {
                op: "average_head",
                left: alloc::vec![self.segments, self.dim],
                right: f.shape().to_vec(),
            });
        }
        let mut mean = Tensor::zeros(&[self.dim]);
        let inv = T::ONE / T::from_usize(self.segments);
        for r in 0..self.segments {
            ops::axpy(mean.data_mut(), inv, f.slab(r));
        }
        let scores = ops::fc(&mean, params.value(self.w3), None)?;
        Ok((mean, scores))
    }

    pub fn backward<T: Scalar>(
        &self,
        params: &mut ParamSet<T>,
        mean: &Tensor<T>,
        grad_scores: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let g = ops::fc_backward(mean, params.value(self.w3), grad_scores)?;
        params.accumulate(self.w3, &g.weight)?;
        let inv = T::ONE / T::from_usize(self.segments);
        Ok(Tensor::from_fn(&[self.segments, self.dim], |i| g.input.data()[i % self.dim] * inv))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::rng_from_seed;
    use alloc::vec;

    fn ramp() -> Tensor<f64> {
        Tensor::new(&[8, 1], (1..=8).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn ramp_pools_to_residue_maxima() {
        let bank = timescale_pool(&ramp()).unwrap();
        assert_eq!(bank.v.data(), &[8., 7., 8., 5., 6., 7., 8.]);
        assert_eq!(bank.rows(), 7);
        let ks: Vec<_> = bank.scales.iter().map(|s| (s.k, s.offset)).collect();
        assert_eq!(ks, vec![(1, 0), (2, 0), (2, 1), (4, 0), (4, 1), (4, 2), (4, 3)]);
    }

    #[test]
    fn non_power_of_two_rejected() {
        let f = Tensor::<f64>::zeros(&[6, 2]);
        assert_eq!(timescale_pool(&f).unwrap_err(), Error::NotPowerOfTwo(6));
        assert_eq!(timescale_pool(&Tensor::<f64>::zeros(&[1, 2])).unwrap_err(), Error::NotPowerOfTwo(1));
    }

    #[test]
    fn shrink_and_aggregate_by_hand() {
        let f = Tensor::<f64>::new(&[2, 2], vec![2., 4., 1., 0.]).unwrap();
        let bank = timescale_pool(&f).unwrap();
        assert_eq!(bank.v.data(), &[2., 4.]);
        assert_eq!(shrink(&bank).data(), &[3.]);
        let bank = timescale_pool(&ramp()).unwrap();
        let w = Tensor::full(&[7, 1], 1.0 / 7.0);
        let fg = aggregate(&w, &bank).unwrap();
        assert!((fg.data()[0] - 7.0).abs() < 1e-12);
        let mut one_hot = Tensor::zeros(&[7, 1]);
        one_hot.set(&[3, 0], 1.0);
        assert_eq!(aggregate(&one_hot, &bank).unwrap().data(), &[5.0]);
    }

    #[test]
    fn zero_perception_weights_are_uniform() {
        let mut ps = ParamSet::<f64>::new();
        let head = VapHead::register(&mut ps, "vap", 8, 3, 4, 4, &mut rng_from_seed(1)).unwrap();
        assert_eq!(head.hidden(), 28);
        ps.value_mut(head.w1).fill(0.0);
        ps.value_mut(head.w2).fill(0.0);
        let z = Tensor::from_fn(&[7, 1], |i| i as f64);
        let w = head.weight_perception(&ps, &z).unwrap();
        assert!(w.data().iter().all(|&x| (x - 1.0 / 7.0).abs() < 1e-15));
    }

    #[test]
    fn predict_by_hand() {
        let mut ps = ParamSet::<f64>::new();
        let head = VapHead::register(&mut ps, "vap", 2, 2, 2, 4, &mut rng_from_seed(1)).unwrap();
        ps.load("vap.w3", Tensor::new(&[2, 2], vec![1., 0., 0., 2.]).unwrap()).unwrap();
        let s = head.predict(&ps, &Tensor::from_slice(&[3., 4.])).unwrap();
        assert_eq!(s.data(), &[3., 8.]);
    }

    #[test]
    fn bind_recovers_dimensions() {
        let mut ps = ParamSet::<f32>::new();
        let head = VapHead::register(&mut ps, "h", 8, 5, 3, 2, &mut rng_from_seed(2)).unwrap();
        assert_eq!(VapHead::bind(&ps, "h").unwrap(), head);
    }
}
