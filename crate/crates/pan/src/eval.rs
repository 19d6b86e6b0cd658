//! Parallel evaluation over loaded clips.

use pan_core::model::Predictor;
use pan_core::sampler::VideoClip;
use pan_core::train::EvalReport;
use rayon::prelude::*;

use crate::error::Result;

/// Same report as [`pan_core::train::evaluate`], with clips scored in parallel.
pub fn evaluate_parallel<P: Predictor + Sync + ?Sized>(model: &P, data: &[VideoClip]) -> Result<EvalReport> {
    let preds = data.par_iter().map(|c| model.predict(c)).collect::<pan_core::Result<Vec<_>>>()?;
    let labels: Vec<usize> = data.iter().map(|c| c.label).collect();
    Ok(EvalReport::from_predictions(model.classes(), &labels, &preds)?)
}

/// Worker count from `PAN_WORKERS`, if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

pub const WORKERS_ENV: &str = "PAN_WORKERS";
