//! Mini-batch training loop shared by every model.
//!
//! Each sample gets its own graph; per-sample gradients are computed in
//! parallel, then summed in sample order so results do not depend on the
//! thread count.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{clip_grad_norm, Adam, Bound, Graph, ParamStore, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub clip_norm: f64,
    /// Testing hook: pretend the loss at this global step is NaN.
    pub fault_inject_nan_step: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 8,
            learning_rate: 2e-3,
            lr_decay: 0.9,
            clip_norm: 5.0,
            fault_inject_nan_step: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must lie in (0, 1]".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub steps: usize,
}

/// Seed for sample `index` in `epoch`, independent of batch scheduling.
pub fn sample_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut z = seed
        .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run Adam over `samples`. `loss` builds the scalar loss for one sample
/// given a per-sample seed (for augmentation); `on_epoch` sees the stats
/// after each epoch.
pub fn fit<S, F>(
    params: &mut ParamStore,
    samples: &[S],
    cfg: &TrainConfig,
    seed: u64,
    loss: F,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<Vec<EpochStats>>
where
    S: Sync,
    F: Fn(&mut Graph, &Bound, &S, u64) -> Result<Var> + Sync,
{
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Invalid("no training samples".into()));
    }
    let mut opt = Adam::new(params, cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut global_step = 0usize;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(seed, epoch, usize::MAX)));
        let mut total = 0.0;
        let mut steps = 0;
        for batch in order.chunks(cfg.batch_size) {
            let frozen: &ParamStore = params;
            let results: Vec<Result<(f64, Vec<Vec<f64>>)>> = batch
                .par_iter()
                .map(|&i| {
                    let mut g = Graph::new();
                    let p = frozen.bind(&mut g);
                    let l = loss(&mut g, &p, &samples[i], sample_seed(seed, epoch, i))?;
                    let value = g.scalar(l);
                    if !value.is_finite() {
                        return Ok((value, Vec::new()));
                    }
                    g.backward(l)?;
                    Ok((value, p.grads(&g)))
                })
                .collect();
            let mut sum: Option<Vec<Vec<f64>>> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (value, grads) = r?;
                let value = if cfg.fault_inject_nan_step == Some(global_step) {
                    f64::NAN
                } else {
                    value
                };
                if !value.is_finite() {
                    return Err(Error::Diverged(format!(
                        "loss became {value} at epoch {epoch}, step {global_step}"
                    )));
                }
                batch_loss += value;
                match &mut sum {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            a.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let mut grads = sum.expect("batches are non-empty");
            let inv = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= inv);
            params.accumulate(&grads);
            let norm = clip_grad_norm(params, cfg.clip_norm);
            if !norm.is_finite() {
                return Err(Error::Diverged(format!(
                    "gradient norm became {norm} at epoch {epoch}, step {global_step}"
                )));
            }
            opt.step(params);
            total += batch_loss * inv;
            steps += 1;
            global_step += 1;
        }
        let stats = EpochStats {
            epoch,
            mean_loss: total / steps as f64,
            steps,
        };
        on_epoch(&stats);
        history.push(stats);
        opt.lr *= cfg.lr_decay;
    }
    Ok(history)
}
