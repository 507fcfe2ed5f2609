use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{adam_step, AdamConfig, OptimizerState, Trainable};
use crate::coupling::{Coupler, CouplingStrategy};
use crate::flow::{cfm_loss, CfmConfig};
use crate::linalg::Matrix;
use crate::rng::TrainRng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    /// Coupled minibatches of `batch_size` drawn per step. Each is matched
    /// on its own and the gradient is taken over their union.
    pub groups: usize,
    pub adam: AdamConfig,
    /// Linear warmup length; the rate is constant afterwards.
    pub warmup: usize,
    pub cfm: CfmConfig,
    /// Exponential moving average of the parameters. When set, the model
    /// holds the averaged parameters once training ends.
    pub ema_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 10_000,
            batch_size: 128,
            groups: 1,
            adam: AdamConfig::default(),
            warmup: 500,
            cfm: CfmConfig::default(),
            ema_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if self.groups == 0 {
            return Err(Error::InvalidParameter("groups must be >= 1".into()));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::InvalidParameter(format!("ema_decay = {d} outside [0, 1)")));
            }
        }
        self.cfm.validate()
    }
}

/// Learning rate at 0-based iteration `iter`.
pub fn lr_at(cfg: &TrainConfig, iter: usize) -> f64 {
    if cfg.warmup == 0 {
        cfg.adam.lr
    } else {
        cfg.adam.lr * ((iter + 1) as f64 / cfg.warmup as f64).min(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub iter: usize,
    pub loss: f64,
    pub reassignments: usize,
    pub local_ot_cost: f64,
    /// Mean squared distance of the batch pairs.
    pub pair_cost: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<TrainRecord>,
}

impl TrainingLog {
    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// Mean loss over the last `n` records.
    pub fn tail_loss(&self, n: usize) -> f64 {
        let tail = &self.records[self.records.len().saturating_sub(n)..];
        tail.iter().map(|r| r.loss).sum::<f64>() / tail.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "iter,loss,reassignments,local_ot_cost")?;
        for r in &self.records {
            writeln!(w, "{},{},{},{}", r.iter, r.loss, r.reassignments, r.local_ot_cost)?;
        }
        Ok(())
    }
}

/// Alternates coupled batch sampling, the CFM loss and an Adam step.
pub fn train<M: Trainable>(
    model: &mut M,
    coupler: &mut Coupler,
    data: &Matrix,
    cfg: &TrainConfig,
    rng: &mut TrainRng,
) -> Result<TrainingLog> {
    cfg.validate()?;
    let mut opt = OptimizerState::new(model.num_params(), &cfg.adam)?;
    let mut ema = cfg.ema_decay.map(|_| model.params().to_vec());
    let mut log = TrainingLog { records: Vec::with_capacity(cfg.iterations) };
    for iter in 0..cfg.iterations {
        let mut batch = coupler.next_batch(data, cfg.batch_size, rng)?;
        for _ in 1..cfg.groups {
            batch.extend(coupler.next_batch(data, cfg.batch_size, rng)?)?;
        }
        let (loss, grads) = cfm_loss(model, &batch, &cfg.cfm, rng).map_err(|e| match e {
            Error::NonFinite(what) => Error::Diverged { iter, reason: format!("non-finite {what}") },
            other => other,
        })?;
        if !loss.is_finite() || !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::Diverged { iter, reason: format!("loss = {loss}") });
        }
        opt.lr = lr_at(cfg, iter);
        adam_step(&mut opt, model.params_mut(), &grads)?;
        if let (Some(avg), Some(decay)) = (ema.as_mut(), cfg.ema_decay) {
            for (a, p) in avg.iter_mut().zip(model.params()) {
                *a = decay * *a + (1.0 - decay) * p;
            }
        }
        log.records.push(TrainRecord {
            iter,
            loss,
            reassignments: batch.reassignment_count,
            local_ot_cost: batch.local_ot_cost,
            pair_cost: batch.mean_squared_pair_cost(),
        });
    }
    if let Some(avg) = ema {
        model.params_mut().copy_from_slice(&avg);
    }
    Ok(log)
}

/// Builds the coupler for `strategy` and trains; returns the coupler so its store can be inspected.
pub fn train_strategy<M: Trainable>(
    model: &mut M,
    strategy: CouplingStrategy,
    caches: usize,
    store_seed: u64,
    data: &Matrix,
    cfg: &TrainConfig,
    rng: &mut TrainRng,
) -> Result<(TrainingLog, Coupler)> {
    let mut coupler = Coupler::new(strategy, data, caches, store_seed)?;
    let log = train(model, &mut coupler, data, cfg, rng)?;
    Ok((log, coupler))
}
