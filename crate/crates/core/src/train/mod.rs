//! Optimisation: Adam with warmup + inverse-sqrt learning rate, the
//! training loop with online back-translation, and checkpoint averaging.

mod state;
mod trainer;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use state::{TrainState, STATE_FILE};
pub use trainer::{train, train_baseline, BestEntry, BtCounters, StepRecord, TrainOutcome, Trainer, METRICS_FILE};

use crate::data::DEFAULT_TEMPERATURE;
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::params::ParamStore;
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub peak_lr: Real,
    pub warmup_updates: u64,
    pub total_updates: u64,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    /// Source plus target tokens per batch.
    pub token_budget: usize,
    /// Exponent on direction sizes when sampling directions.
    pub temperature: Real,
    /// Global gradient-norm clip; 0 disables it.
    pub clip_norm: Real,
    pub seed: u64,
    /// Updates between validations (and checkpoints).
    pub checkpoint_interval: u64,
    /// Checkpoints averaged into the final model.
    pub keep_best: usize,
    /// Validation sentences per direction; 0 means all.
    pub valid_limit: usize,
    /// Updates between metrics records.
    pub log_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            peak_lr: 5e-4,
            warmup_updates: 1000,
            total_updates: 20_000,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            token_budget: 2000,
            temperature: DEFAULT_TEMPERATURE,
            clip_norm: 0.0,
            seed: 1,
            checkpoint_interval: 1000,
            keep_best: 5,
            valid_limit: 0,
            log_interval: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.peak_lr > 0.0) || !self.peak_lr.is_finite() {
            return fail(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if self.total_updates == 0 {
            return fail("total_updates must be positive".into());
        }
        if self.warmup_updates == 0 || self.warmup_updates > self.total_updates {
            return fail(format!(
                "warmup_updates must be in 1..={}, got {}",
                self.total_updates, self.warmup_updates
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("Adam betas must be in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            return fail("eps must be positive".into());
        }
        if self.token_budget == 0 {
            return fail("token_budget must be positive".into());
        }
        if !(self.clip_norm >= 0.0) {
            return fail("clip_norm must be >= 0".into());
        }
        if self.checkpoint_interval == 0 || self.log_interval == 0 {
            return fail("checkpoint_interval and log_interval must be positive".into());
        }
        if self.keep_best == 0 {
            return fail("keep_best must be at least 1".into());
        }
        Ok(())
    }
}

/// Linear warmup to `peak_lr` at `warmup_updates`, then
/// `peak_lr · sqrt(warmup / step)`. Steps count from 1.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> Real {
    let step = step.max(1) as Real;
    let warmup = cfg.warmup_updates.max(1) as Real;
    if step < warmup {
        cfg.peak_lr * step / warmup
    } else {
        cfg.peak_lr * (warmup / step).sqrt()
    }
}

/// Adam moments for one parameter store.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub m: ParamStore,
    pub v: ParamStore,
    /// Updates applied so far.
    pub t: u64,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        Adam {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// One bias-corrected update of `params` with gradients `grads`.
    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: Real, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for id in params.ids().collect::<Vec<_>>() {
            let g = grads.value(id);
            let m = self.m.value_mut(id);
            for (m, &g) in m.iter_mut().zip(g) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            }
            let v = self.v.value_mut(id);
            for (v, &g) in v.iter_mut().zip(g) {
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            }
            let (m, v) = (self.m.value(id), self.v.value(id));
            for ((p, &m), &v) in params.value_mut(id).iter_mut().zip(m).zip(v) {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
            }
        }
    }
}

/// Elementwise mean of parameter stores with identical layout.
pub fn average_params(stores: &[&ParamStore]) -> Result<ParamStore> {
    let first = stores.first().ok_or(Error::Empty("checkpoint list"))?;
    if let Some(i) = stores.iter().position(|s| !s.same_layout(first)) {
        return Err(Error::Format(format!(
            "checkpoint {i} has a different parameter layout"
        )));
    }
    let mut out = first.zeros_like();
    let n = stores.len() as Real;
    for id in first.ids().collect::<Vec<_>>() {
        let acc = out.value_mut(id);
        for s in stores {
            acc.iter_mut().zip(s.value(id)).for_each(|(a, v)| *a += v);
        }
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(out)
}

/// Load checkpoints, keep the `k` with the highest `meta.valid_bleu`
/// (earlier position wins ties) and average their parameters, which must
/// have the same layout. Model kind, configuration and metadata come from
/// the best one.
pub fn average_checkpoints(paths: &[&Path], k: usize) -> Result<Checkpoint> {
    if k == 0 || k > paths.len() {
        return Err(Error::Config(format!(
            "cannot average {k} of {} checkpoints",
            paths.len()
        )));
    }
    let mut loaded = paths.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
    let bleu = |c: &Checkpoint| {
        c.meta
            .get("valid_bleu")
            .and_then(|v| v.as_f64())
            .unwrap_or(Real::NEG_INFINITY)
    };
    let mut order: Vec<usize> = (0..loaded.len()).collect();
    order.sort_by(|&a, &b| bleu(&loaded[b]).total_cmp(&bleu(&loaded[a])).then(a.cmp(&b)));
    order.truncate(k);
    let kind = loaded[order[0]].kind;
    if let Some(&i) = order.iter().find(|&&i| loaded[i].kind != kind) {
        return Err(Error::Format(format!(
            "{} does not match the other checkpoints",
            paths[i].display()
        )));
    }
    let params = average_params(&order.iter().map(|&i| &loaded[i].params).collect::<Vec<_>>())?;
    let mut best = loaded.swap_remove(order[0]);
    best.params = params;
    if let serde_json::Value::Object(meta) = &mut best.meta {
        meta.insert("averaged".into(), serde_json::json!(k));
    }
    Ok(best)
}

#[cfg(test)]
mod tests;
