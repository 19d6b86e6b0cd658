//! SGD training loop and evaluation metrics.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use rand::seq::SliceRandom;

use crate::error::{invalid, Error, Result};
use crate::init::rng_from_seed;
use crate::model::{argmax, Network, PanModel, Prediction};
use crate::param::Sgd;
use crate::sampler::{SampleMode, VideoClip};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub batch: usize,
    pub seed: u64,
    /// Epoch indices at which the learning rate is multiplied by `decay`.
    pub milestones: Vec<usize>,
    pub decay: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch: 8,
            seed: 42,
            milestones: vec![30, 60],
            decay: 0.1,
        }
    }
}

impl TrainConfig {
    /// Learning rate applied during `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f32 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        let mut lr = self.lr;
        for _ in 0..passed {
            lr *= self.decay;
        }
        lr
    }

    fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(invalid("TrainConfig", "batch must be >= 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(invalid("TrainConfig", "lr must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f32,
    /// Mean cross-entropy over the epoch's training clips.
    pub loss: f32,
    /// Top-1 of the training-time predictions made during the epoch.
    pub train_acc: f32,
}

/// SplitMix64 finalizer, used to derive independent per-step seeds.
pub fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Trains one network in place. `on_epoch` sees each epoch's metrics and may stop early.
pub fn train_network<F>(net: &mut Network, data: &[VideoClip], cfg: &TrainConfig, mut on_epoch: F) -> Result<Vec<EpochMetrics>>
where
    F: FnMut(&EpochMetrics, &Network) -> ControlFlow<()>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = net.spec().classes;
    if let Some(c) = data.iter().find(|c| c.label >= classes) {
        return Err(Error::LabelOutOfRange {
            label: c.label,
            classes,
        });
    }
    let sampler = net.spec().sampler(SampleMode::TrainRandom);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    net.params.zero_grad();
    for epoch in 0..cfg.epochs {
        opt.lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng_from_seed(mix_seed(cfg.seed, epoch as u64)));
        let mut total_loss = 0.0f64;
        let mut correct = 0usize;
        for (b, batch) in order.chunks(cfg.batch).enumerate() {
            for (i, &idx) in batch.iter().enumerate() {
                let step = (b * cfg.batch + i) as u64;
                let seed = mix_seed(mix_seed(cfg.seed, epoch as u64), step);
                let clip = &data[idx];
                let sampled = clip.sample(&sampler, seed)?;
                let (loss, scores) = net.arch.loss_and_grad(&mut net.params, &sampled, clip.label)?;
                total_loss += loss as f64;
                correct += usize::from(argmax(scores.data()) == clip.label);
            }
            net.params.scale_grads(1.0 / batch.len() as f32);
            opt.step(&mut net.params);
        }
        let m = EpochMetrics {
            epoch,
            lr: opt.lr,
            loss: (total_loss / data.len() as f64) as f32,
            train_acc: correct as f32 / data.len() as f32,
        };
        history.push(m);
        if on_epoch(&m, net).is_break() {
            break;
        }
    }
    Ok(history)
}

/// Trains every network of `model` with its own optimizer; Full branches are independent.
pub fn train_model<F>(model: &mut PanModel, data: &[VideoClip], cfg: &TrainConfig, mut on_epoch: F) -> Result<Vec<Vec<EpochMetrics>>>
where
    F: FnMut(usize, &EpochMetrics, &Network) -> ControlFlow<()>,
{
    model
        .networks_mut()
        .into_iter()
        .enumerate()
        .map(|(i, net)| {
            let branch_cfg = TrainConfig {
                seed: mix_seed(cfg.seed, i as u64),
                ..cfg.clone()
            };
            train_network(net, data, &branch_cfg, |m, n| on_epoch(i, m, n))
        })
        .collect()
}

/// Top-1 accuracy, confusion matrix and mean VAP weights over a labelled set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub top1: f32,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_clip_weights: Vec<Vec<Vec<f32>>>,
    /// Mean of the per-clip timescale weights, one vector per VAP head.
    pub mean_weights: Vec<Vec<f32>>,
}

impl EvalReport {
    pub fn from_predictions(classes: usize, labels: &[usize], preds: &[Prediction]) -> Result<Self> {
        if labels.is_empty() || labels.len() != preds.len() {
            return Err(Error::EmptyDataset);
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        let mut correct = 0;
        for (&l, p) in labels.iter().zip(preds) {
            if l >= classes {
                return Err(Error::LabelOutOfRange { label: l, classes });
            }
            let k = p.top1();
            confusion[l][k] += 1;
            correct += usize::from(k == l);
        }
        let per_clip_weights: Vec<Vec<Vec<f32>>> = preds.iter().map(|p| p.timescale_weights.clone()).collect();
        let mut mean_weights: Vec<Vec<f32>> = per_clip_weights[0].iter().map(|w| vec![0.0; w.len()]).collect();
        for clip in &per_clip_weights {
            for (acc, w) in mean_weights.iter_mut().zip(clip) {
                acc.iter_mut().zip(w).for_each(|(a, &x)| *a += x);
            }
        }
        let n = preds.len() as f32;
        mean_weights.iter_mut().flatten().for_each(|a| *a /= n);
        Ok(Self {
            top1: correct as f32 / n,
            confusion,
            per_clip_weights,
            mean_weights,
        })
    }
}

/// Sequential evaluation with centred sampling.
pub fn evaluate<P: crate::model::Predictor + ?Sized>(model: &P, data: &[VideoClip]) -> Result<EvalReport> {
    let preds = data.iter().map(|c| model.predict(c)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = data.iter().map(|c| c.label).collect();
    EvalReport::from_predictions(model.classes(), &labels, &preds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn milestones_divide_by_ten() {
        let cfg = TrainConfig {
            milestones: vec![2, 4],
            ..TrainConfig::default()
        };
        assert_eq!(cfg.lr_at(0), 0.01);
        assert_eq!(cfg.lr_at(1), 0.01);
        assert!((cfg.lr_at(2) - 0.001).abs() < 1e-9);
        assert!((cfg.lr_at(5) - 0.0001).abs() < 1e-9);
    }

    fn pred(scores: &[f32]) -> Prediction {
        let s = Tensor::from_slice(scores);
        Prediction {
            scores: s.clone(),
            branch_scores: vec![s],
            timescale_weights: vec![vec![0.5, 0.5]],
        }
    }

    #[test]
    fn perfect_predictions_give_diagonal_confusion() {
        let labels = [0, 1, 2, 3];
        let preds: Vec<_> = labels
            .iter()
            .map(|&l| {
                let mut s = [0.0; 4];
                s[l] = 1.0;
                pred(&s)
            })
            .collect();
        let r = EvalReport::from_predictions(4, &labels, &preds).unwrap();
        assert_eq!(r.top1, 1.0);
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, usize::from(i == j));
            }
        }
        assert_eq!(r.mean_weights, vec![vec![0.5, 0.5]]);
    }

    #[test]
    fn empty_set_rejected() {
        assert_eq!(EvalReport::from_predictions(4, &[], &[]).unwrap_err(), Error::EmptyDataset);
    }

    #[test]
    fn seeds_mix() {
        assert_ne!(mix_seed(1, 0), mix_seed(1, 1));
        assert_ne!(mix_seed(0, 1), mix_seed(1, 0));
    }
}
