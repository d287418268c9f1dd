//! Adam-style training for the family anchor and the endpoint fine-tuning
//! procedure. Runs are fully deterministic given (seed, data, config); the
//! returned weights follow a best-checkpoint rule over periodic evaluations.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{loss_and_grad, multi_step_loss_and_grad, Normalizer, Operator, OperatorConfig, TrainObjective};
use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::sim::TrajectoryDataset;
use crate::weights::WeightSet;

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One row of the training log CSV (step, loss, lr, wall-time).
#[derive(Debug, Clone)]
pub struct TrainLogRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

struct Adam {
    m: WeightSet,
    v: WeightSet,
    t: usize,
    params: AdamParams,
}

impl Adam {
    fn new(like: &WeightSet, params: AdamParams) -> Self {
        Self {
            m: like.zeros_like(),
            v: like.zeros_like(),
            t: 0,
            params,
        }
    }

    fn step(&mut self, weights: &mut WeightSet, grads: &WeightSet, lr: f64) {
        self.t += 1;
        let b1 = self.params.beta1;
        let b2 = self.params.beta2;
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        for (name, w) in weights.iter_mut() {
            let g = &grads.get(name).expect("grad schema").data;
            let m = &mut self.m.get_mut(name).expect("m schema").data;
            for (mi, gi) in m.iter_mut().zip(g.iter()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
            }
            let v = &mut self.v.get_mut(name).expect("v schema").data;
            for (vi, gi) in v.iter_mut().zip(g.iter()) {
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            }
            let m = &self.m.get(name).unwrap().data;
            let v = &self.v.get(name).unwrap().data;
            for ((wi, mi), vi) in w.data.iter_mut().zip(m.iter()).zip(v.iter()) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *wi -= lr * mhat / (vhat.sqrt() + self.params.eps);
            }
        }
    }
}

/// Flattened one-step pairs over a set of datasets, in dataset/sample/frame
/// order.
fn collect_pairs<'a>(datasets: &[&'a TrajectoryDataset]) -> Vec<(&'a GridField, &'a GridField)> {
    let mut pairs = Vec::new();
    for d in datasets {
        pairs.extend(d.one_step_pairs());
    }
    pairs
}

/// Rollout windows (start frame, following `horizon` frames).
fn collect_windows<'a>(
    datasets: &[&'a TrajectoryDataset],
    horizon: usize,
) -> Vec<(&'a GridField, &'a [GridField])> {
    let mut windows = Vec::new();
    for d in datasets {
        for s in &d.samples {
            if s.frames.len() > horizon {
                for t in 0..s.frames.len() - horizon {
                    windows.push((&s.frames[t], &s.frames[t + 1..t + 1 + horizon]));
                }
            }
        }
    }
    windows
}

fn run_training(
    cfg: &OperatorConfig,
    norm: Normalizer,
    init: WeightSet,
    datasets: &[&TrajectoryDataset],
    seed: u64,
) -> Result<(WeightSet, Vec<TrainLogRow>)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut op = Operator::new(cfg.clone(), init, norm)?;
    let mut log = Vec::new();
    if cfg.steps == 0 {
        return Ok((op.weights, log));
    }

    let pairs = collect_pairs(datasets);
    if pairs.is_empty() {
        return Err(Error::InvalidParam("no training pairs".into()));
    }
    let horizon = match cfg.objective {
        TrainObjective::OneStep => 0,
        TrainObjective::MultiStep { horizon } => horizon,
    };
    let windows = if horizon > 0 {
        collect_windows(datasets, horizon)
    } else {
        Vec::new()
    };
    if horizon > 0 && windows.is_empty() {
        return Err(Error::InvalidParam(
            "trajectories shorter than the rollout horizon".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Fixed evaluation subset for the best-checkpoint rule.
    let eval_count = pairs.len().min(64);
    let mut eval_idx: Vec<usize> = (0..pairs.len()).collect();
    for i in (1..eval_idx.len()).rev() {
        let j = rng.gen_range(0..=i);
        eval_idx.swap(i, j);
    }
    eval_idx.truncate(eval_count);

    let eval_loss = |op: &Operator| -> Result<f64> {
        let subset: Vec<_> = eval_idx.iter().map(|&i| pairs[i]).collect();
        let (l, _) = loss_and_grad(op, &subset)?;
        Ok(l)
    };

    let mut adam = Adam::new(&op.weights, AdamParams::default());
    let mut best_loss = eval_loss(&op)?;
    let mut best_weights = op.weights.clone();

    for step in 1..=cfg.steps {
        let (loss, grads) = if horizon > 0 {
            let batch: Vec<_> = (0..cfg.batch_size)
                .map(|_| windows[rng.gen_range(0..windows.len())])
                .collect();
            multi_step_loss_and_grad(&op, &batch)?
        } else {
            let batch: Vec<_> = (0..cfg.batch_size)
                .map(|_| pairs[rng.gen_range(0..pairs.len())])
                .collect();
            loss_and_grad(&op, &batch)?
        };
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {step}")));
        }
        adam.step(&mut op.weights, &grads, cfg.lr);
        log.push(TrainLogRow {
            step,
            loss,
            lr: cfg.lr,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        if step % cfg.eval_every.max(1) == 0 || step == cfg.steps {
            let l = eval_loss(&op)?;
            if l < best_loss {
                best_loss = l;
                best_weights = op.weights.clone();
            }
        }
    }
    Ok((best_weights, log))
}

/// Train the family anchor on the support datasets from a seeded
/// initialization. The normalizer is fit on the support data and travels with
/// the returned weights for the rest of the lineage.
pub fn train_anchor(
    cfg: &OperatorConfig,
    support: &[&TrajectoryDataset],
) -> Result<(WeightSet, Normalizer, Vec<TrainLogRow>)> {
    if support.is_empty() {
        return Err(Error::InvalidParam("need at least one support regime".into()));
    }
    let frames = support
        .iter()
        .flat_map(|d| d.samples.iter())
        .flat_map(|s| s.frames.iter());
    let norm = Normalizer::fit(frames, cfg.channels);
    let init = super::init_weights(cfg)?;
    let (weights, log) = run_training(cfg, norm.clone(), init, support, cfg.seed)?;
    Ok((weights, norm, log))
}

/// Fine-tune an endpoint expert from the anchor on one endpoint dataset.
/// Uses the (lower) learning rate and step count of `cfg`; the anchor's
/// normalizer is kept unchanged.
pub fn finetune_endpoint(
    anchor: &WeightSet,
    norm: &Normalizer,
    endpoint: &TrajectoryDataset,
    cfg: &OperatorConfig,
) -> Result<(WeightSet, Vec<TrainLogRow>)> {
    anchor.assert_same_schema(&super::init_weights(cfg)?)?;
    run_training(cfg, norm.clone(), anchor.clone(), &[endpoint], cfg.seed)
}
