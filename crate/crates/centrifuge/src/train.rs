//! SGD-with-momentum training loop, stepped learning-rate schedule,
//! checkpointing, and validation.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{AlphaPolicy, BlendedSample, PairMode, PairSampler};
use crate::error::{Error, Result};
use crate::losses::{
    consistency_loss, consistency_loss_grad_into, diversity_penalty, diversity_penalty_grad_into,
    pit_assignment, pit_loss, pit_loss_grad_into, Assignment, LossReport,
};
use crate::model::checkpoint::save_checkpoint;
use crate::model::{LayerSet, SeparationModel};
use crate::num::Scalar;
use crate::tensor::Tensor;
use crate::videoio::VideoClip;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub val: u64,
}

impl Seeds {
    /// Derive the three independent seeds from one master seed.
    pub fn from_master(seed: u64) -> Self {
        Seeds {
            init: seed,
            data: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1),
            val: seed.wrapping_mul(0xA076_1D64_78BD_642F).wrapping_add(2),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// (step, lr) pairs; the new rate applies from the milestone step on.
    pub lr_milestones: Vec<(u64, f64)>,
    pub clip_t: usize,
    pub clip_h: usize,
    pub clip_w: usize,
    #[serde(default)]
    pub alpha: AlphaPolicy,
    #[serde(default)]
    pub pair_mode: PairMode,
    #[serde(default = "default_true")]
    pub augment: bool,
    pub seeds: Seeds,
    /// Validate every this many steps (0: only at the end).
    #[serde(default)]
    pub val_every: u64,
    #[serde(default = "default_val_samples")]
    pub val_samples: usize,
    /// Checkpoint every this many steps (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Optional loss terms, both off by default.
    #[serde(default)]
    pub consistency_weight: f64,
    #[serde(default)]
    pub diversity_penalty_weight: f64,
}

fn default_true() -> bool {
    true
}
fn default_val_samples() -> usize {
    32
}

impl TrainConfig {
    /// Desk-scale defaults: 16-frame 64x64 clips, batch 8, 3000 steps with
    /// the schedule milestones scaled proportionally from the long-run
    /// protocol, momentum 0.9.
    pub fn desk_default() -> Self {
        TrainConfig {
            total_steps: 3000,
            batch_size: 8,
            base_lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            lr_milestones: vec![(1250, 0.05), (1875, 0.025), (2500, 0.01)],
            clip_t: 16,
            clip_h: 64,
            clip_w: 64,
            alpha: AlphaPolicy::Fixed(0.5),
            pair_mode: PairMode::Normal,
            augment: true,
            seeds: Seeds::from_master(0),
            val_every: 500,
            val_samples: 32,
            checkpoint_every: 0,
            consistency_weight: 0.0,
            diversity_penalty_weight: 0.0,
        }
    }

    /// The long-run protocol: lr 0.1, momentum 0.99, no weight decay,
    /// batch 10, lowered to 0.05/0.025/0.01 at 100k/150k/200k of 240k steps.
    pub fn paper() -> Self {
        TrainConfig {
            total_steps: 240_000,
            batch_size: 10,
            base_lr: 0.1,
            momentum: 0.99,
            weight_decay: 0.0,
            lr_milestones: vec![(100_000, 0.05), (150_000, 0.025), (200_000, 0.01)],
            clip_t: 32,
            clip_h: 112,
            clip_w: 112,
            alpha: AlphaPolicy::Fixed(0.5),
            pair_mode: PairMode::Normal,
            augment: true,
            seeds: Seeds::from_master(0),
            val_every: 5000,
            val_samples: 256,
            checkpoint_every: 10_000,
            consistency_weight: 0.0,
            diversity_penalty_weight: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::InvalidConfig("base_lr must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!("momentum {} outside [0,1)", self.momentum)));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        let mut prev_step = 0u64;
        let mut prev_lr = self.base_lr;
        for &(step, lr) in &self.lr_milestones {
            if step <= prev_step && prev_step != 0 || step == 0 {
                return Err(Error::InvalidConfig("milestone steps must be strictly increasing".into()));
            }
            if lr >= prev_lr {
                return Err(Error::InvalidConfig("milestone lrs must be strictly decreasing".into()));
            }
            prev_step = step;
            prev_lr = lr;
        }
        Ok(())
    }
}

/// Piecewise-constant schedule; the milestone step itself already uses the
/// new rate.
pub fn lr_at(step: u64, config: &TrainConfig) -> f64 {
    let mut lr = config.base_lr;
    for &(s, l) in &config.lr_milestones {
        if step >= s {
            lr = l;
        }
    }
    lr
}

/// SGD with momentum: `v <- momentum * v + g (+ wd * w)`, `w <- w - lr * v`.
pub struct SgdMomentum<S> {
    pub momentum: S,
    pub weight_decay: S,
    pub velocity: HashMap<String, Vec<S>>,
}

impl<S: Scalar> SgdMomentum<S> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        SgdMomentum {
            momentum: S::from_f64(momentum),
            weight_decay: S::from_f64(weight_decay),
            velocity: HashMap::new(),
        }
    }

    pub fn step_param(&mut self, lr: S, name: &str, w: &mut [S], g: &[S]) {
        let v = self
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| vec![S::zero(); w.len()]);
        for ((vk, wk), &gk) in v.iter_mut().zip(w.iter_mut()).zip(g.iter()) {
            let grad = gk + self.weight_decay * *wk;
            *vk = self.momentum * *vk + grad;
            *wk = *wk - lr * *vk;
        }
    }

    pub fn apply(&mut self, model: &mut SeparationModel<S>, lr: f64) {
        let lr = S::from_f64(lr);
        model.visit_params(&mut |name, w, g| self.step_param(lr, name, w, g));
    }

    /// Export velocities for checkpointing, deterministically ordered.
    pub fn export(&self) -> Vec<(String, Vec<S>)> {
        let sorted: BTreeMap<_, _> = self.velocity.iter().collect();
        sorted
            .into_iter()
            .map(|(k, v)| (format!("velocity.{k}"), v.clone()))
            .collect()
    }

    pub fn import(&mut self, extra: &[(String, Vec<S>)]) {
        for (name, v) in extra {
            if let Some(param) = name.strip_prefix("velocity.") {
                self.velocity.insert(param.to_string(), v.clone());
            }
        }
    }
}

/// Anything that turns a blended sample into layer hypotheses. The real
/// model only looks at `sample.blended`; test oracles may peek at the
/// ground truth.
pub trait Separator<S: Scalar> {
    fn n_layers(&self) -> usize;
    fn separate(&mut self, sample: &BlendedSample<S>) -> LayerSet<S>;
}

impl<S: Scalar> Separator<S> for SeparationModel<S> {
    fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    fn separate(&mut self, sample: &BlendedSample<S>) -> LayerSet<S> {
        let out = self.forward_batch(&sample.blended.to_tensor(), false);
        LayerSet::from_tensor_sample(&out.final_layers, 0)
    }
}

/// Eval-mode mean loss over a fixed prefix of the validation stream. The
/// aggregate report carries the mean total/l1/l2/diversity and the modal
/// assignment.
pub fn validate<S: Scalar, M: Separator<S>>(
    model: &mut M,
    sampler: &PairSampler<S>,
    num_samples: usize,
) -> Result<LossReport<S>> {
    if num_samples == 0 {
        return Err(Error::InvalidInput("validation over zero samples".into()));
    }
    let mut total = 0.0;
    let mut l1 = 0.0;
    let mut l2 = 0.0;
    let mut diversity = 0.0;
    let mut assignment_votes: HashMap<(usize, usize), usize> = HashMap::new();
    for index in 0..num_samples as u64 {
        let sample = sampler.sample(index);
        let layers = model.separate(&sample);
        let report = pit_loss(&sample.v1, &sample.v2, &layers);
        total += report.total.as_f64();
        l1 += report.l1.as_f64();
        l2 += report.l2.as_f64();
        diversity += report.diversity.as_f64();
        *assignment_votes
            .entry((report.assignment.i, report.assignment.j))
            .or_insert(0) += 1;
    }
    let n = num_samples as f64;
    let (&(i, j), _) = assignment_votes
        .iter()
        .max_by_key(|(&(i, j), &count)| (count, std::cmp::Reverse((i, j))))
        .expect("at least one sample");
    Ok(LossReport {
        total: S::from_f64(total / n),
        assignment: Assignment { i, j },
        l1: S::from_f64(l1 / n),
        l2: S::from_f64(l2 / n),
        diversity: S::from_f64(diversity / n),
        consistency: None,
        diversity_penalty: None,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainLogRow {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainLog {
    pub rows: Vec<TrainLogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,train_loss,val_loss\n");
        for row in &self.rows {
            let train = if row.train_loss.is_finite() { row.train_loss.to_string() } else { String::new() };
            let val = row.val_loss.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", row.step, row.lr, train, val));
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn last_val_loss(&self) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| r.val_loss)
    }
}

/// One optimization step over a prepared batch; returns the batch-mean
/// training loss (computed before the update). Exposed for the gradient
/// checks, which need loss and gradients for the exact same batch.
pub fn train_step_loss<S: Scalar>(
    model: &mut SeparationModel<S>,
    batch: &[BlendedSample<S>],
    config: &TrainConfig,
) -> f64 {
    let blended: Vec<&VideoClip<S>> = batch.iter().map(|s| &s.blended).collect();
    let x = VideoClip::batch(&blended);
    let out = model.forward_batch(&x, true);
    let (loss, dfinal) = batch_loss_and_grad(&out.final_layers, batch, config);
    model.zero_grads();
    model.backward_batch(&dfinal);
    loss
}

fn batch_loss_and_grad<S: Scalar>(
    final_layers: &Tensor<S>,
    batch: &[BlendedSample<S>],
    config: &TrainConfig,
) -> (f64, Tensor<S>) {
    let n = batch.len();
    let scale = S::one() / S::from_usize(n);
    let cw = config.consistency_weight;
    let dw = config.diversity_penalty_weight;
    let mut dfinal = Tensor::zeros(final_layers.dims());
    let sample_len = final_layers.sample_len();
    let losses: Vec<f64> = dfinal
        .data_mut()
        .par_chunks_mut(sample_len)
        .enumerate()
        .map(|(i, dslice)| {
            let sample = &batch[i];
            let layers = LayerSet::from_tensor_sample(final_layers, i);
            let (assignment, l1, l2) = pit_assignment(&sample.v1, &sample.v2, &layers);
            let mut loss = (l1 + l2).as_f64();
            pit_loss_grad_into(&sample.v1, &sample.v2, &layers, assignment, scale, dslice);
            if cw != 0.0 {
                loss += cw
                    * consistency_loss(&sample.blended, &layers, assignment, sample.alpha).as_f64();
                consistency_loss_grad_into(
                    &sample.blended,
                    &layers,
                    assignment,
                    sample.alpha,
                    S::from_f64(cw) * scale,
                    dslice,
                );
            }
            if dw != 0.0 {
                loss += dw * diversity_penalty(&layers, assignment).as_f64();
                diversity_penalty_grad_into(&layers, assignment, S::from_f64(dw) * scale, dslice);
            }
            loss
        })
        .collect();
    (losses.iter().sum::<f64>() / n as f64, dfinal)
}

/// Run the training loop from `model.step` to `config.total_steps`. Batches
/// are indexed by absolute step, so resuming from a checkpoint replays the
/// exact sample sequence of an unbroken run.
pub fn train<S: Scalar>(
    mut model: SeparationModel<S>,
    optimizer: &mut SgdMomentum<S>,
    train_sampler: &PairSampler<S>,
    val_sampler: &PairSampler<S>,
    config: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<(SeparationModel<S>, TrainLog)> {
    config.validate()?;
    let mut log = TrainLog::default();
    let batch = config.batch_size as u64;
    let ckpt_path = |name: &str| -> Option<PathBuf> { checkpoint_dir.map(|d| d.join(name)) };

    for step in model.step..config.total_steps {
        let samples: Vec<BlendedSample<S>> = (0..batch)
            .into_par_iter()
            .map(|k| train_sampler.sample(step * batch + k))
            .collect();
        let blended: Vec<&VideoClip<S>> = samples.iter().map(|s| &s.blended).collect();
        let x = VideoClip::batch(&blended);

        let out = model.forward_batch(&x, true);
        let (train_loss, dfinal) = batch_loss_and_grad(&out.final_layers, &samples, config);
        if !train_loss.is_finite() {
            let diagnostic = ckpt_path("diverged.ckpt");
            if let Some(path) = &diagnostic {
                save_checkpoint(&mut model, &optimizer.export(), path)?;
            }
            return Err(Error::Diverged { step, loss: train_loss, checkpoint: diagnostic });
        }
        model.zero_grads();
        model.backward_batch(&dfinal);
        let lr = lr_at(step, config);
        optimizer.apply(&mut model, lr);
        model.step = step + 1;

        let val_loss = if config.val_every > 0 && model.step % config.val_every == 0 {
            Some(validate(&mut model, val_sampler, config.val_samples)?.total.as_f64())
        } else {
            None
        };
        log.rows.push(TrainLogRow { step, lr, train_loss, val_loss });

        if config.checkpoint_every > 0 && model.step % config.checkpoint_every == 0 {
            if let Some(path) = ckpt_path(&format!("step_{:07}.ckpt", model.step)) {
                save_checkpoint(&mut model, &optimizer.export(), &path)?;
            }
        }
    }

    if config.val_samples > 0 {
        let val = validate(&mut model, val_sampler, config.val_samples)?.total.as_f64();
        log.rows.push(TrainLogRow {
            step: model.step,
            lr: lr_at(model.step, config),
            train_loss: f64::NAN,
            val_loss: Some(val),
        });
    }
    if let Some(path) = ckpt_path("final.ckpt") {
        save_checkpoint(&mut model, &optimizer.export(), &path)?;
    }
    Ok((model, log))
}
