//! Losses, the two-stage training protocol, evaluation and analysis.
//!
//! Stage one (warm-up) trains the encoders and the pose network under a
//! Bernoulli(0.5) visual policy; the policy network is left untouched. Stage
//! two trains everything end to end with straight-through decisions, first at
//! the joint learning rate and then at the fine-tuning rate. The temperature
//! follows the joint epoch counter across both learning rates.

mod analysis;
mod eval;
mod experiment;
mod svg;

pub use analysis::{
    bin_index, decision_trace, moving_average, reset_rate, spearman, usage_analysis, BinStat, DecisionTrace, ResetStats,
    TraceRow, UsageTables, SPEED_EDGES, TRACE_WINDOW, YAW_EDGES,
};
pub use eval::{evaluate, mean_std_sample, report_csv, Metrics, RunReport, SeedResult};
pub use experiment::{
    compare_baselines, matched_baselines, prepare_data, run_sweep, train_single, warmup, BaselineComparison, SweepEntry, SweepResult,
    WarmupResult,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::RelPose;
use crate::gumbel::TemperatureSchedule;
use crate::model::{rollout_train, Batch, GateGrad, ModelError, PolicyMode, TrainOptions, VioModel};
use crate::nn::{clip_global_norm, Adam, AdamConfig, NnError};
use crate::simkit::{Sequence, SimError};
use crate::tensor::{Graph, Tensor, TensorError, Var};
use crate::Rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("training diverged in {stage} at epoch {epoch}, step {step}")]
    Diverged { stage: String, epoch: usize, step: usize },
    #[error("length mismatch: {pred} predictions, {gt} targets")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("invalid training setup: {0}")]
    Config(String),
    #[error("unknown sequence id {0}")]
    UnknownSequence(usize),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Rotation weight.
    pub alpha: f64,
    /// Per-interval visual-usage penalty.
    pub lambda: f64,
    /// Frames per training subsequence; a subsequence has `seq_len − 1`
    /// intervals.
    pub seq_len: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: 100.0, lambda: 0.0, seq_len: 11 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.alpha > 0.0) || !(self.lambda >= 0.0) || self.seq_len < 2 {
            return Err(TrainError::Config(format!(
                "need alpha > 0, lambda ≥ 0, seq_len ≥ 2 (got {}, {}, {})",
                self.alpha, self.lambda, self.seq_len
            )));
        }
        Ok(())
    }

    pub fn intervals(&self) -> usize {
        self.seq_len - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub epochs: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub warmup: StageConfig,
    pub joint: StageConfig,
    pub finetune: StageConfig,
    pub batch_size: usize,
    /// Random subsequences drawn per epoch.
    pub windows_per_epoch: usize,
    /// `P(visual)` of the warm-up policy.
    pub warmup_visual_p: f64,
    pub temperature: TemperatureSchedule,
    pub clip_norm: f64,
    pub gate: GateGrad,
}

impl Default for TrainSchedule {
    /// Desk-scale learning rates; epochs and batch size as published.
    fn default() -> Self {
        Self {
            warmup: StageConfig { epochs: 40, lr: 2e-3 },
            joint: StageConfig { epochs: 40, lr: 5e-4 },
            finetune: StageConfig { epochs: 20, lr: 5e-5 },
            batch_size: 16,
            windows_per_epoch: 512,
            warmup_visual_p: 0.5,
            temperature: TemperatureSchedule::default(),
            clip_norm: 5.0,
            gate: GateGrad::StraightThrough,
        }
    }
}

impl TrainSchedule {
    /// The published learning rates, tuned for KITTI-scale losses.
    pub fn paper() -> Self {
        Self {
            warmup: StageConfig { epochs: 40, lr: 5e-4 },
            joint: StageConfig { epochs: 40, lr: 5e-5 },
            finetune: StageConfig { epochs: 20, lr: 1e-6 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let lrs = [self.warmup.lr, self.joint.lr, self.finetune.lr];
        if lrs.iter().any(|&lr| !(lr > 0.0)) {
            return Err(TrainError::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.windows_per_epoch == 0 {
            return Err(TrainError::Config("batch size and windows per epoch must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.warmup_visual_p) {
            return Err(TrainError::Config(format!("warm-up probability {}", self.warmup_visual_p)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(TrainError::Config("clip norm must be positive".into()));
        }
        Ok(())
    }

    fn batches_per_epoch(&self) -> usize {
        self.windows_per_epoch.div_ceil(self.batch_size)
    }
}

/// Mean of `(1/(3(T−1)))·Σ_t (‖v̂−v‖² + α‖φ̂−φ‖²)` over the batch rows.
/// `preds[t]` and `targets[t]` are `[batch × 6]`, ordered `(φ, v)`.
pub fn pose_loss(g: &mut Graph, preds: &[Var], targets: &[Tensor], alpha: f64) -> Result<Var, TrainError> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(TrainError::LengthMismatch { pred: preds.len(), gt: targets.len() });
    }
    let batch = targets[0].shape()[0];
    let weights: Vec<f64> = (0..batch).flat_map(|_| [alpha, alpha, alpha, 1.0, 1.0, 1.0]).collect();
    let w = g.constant(Tensor::new(&[batch, 6], weights)?);
    let mut total: Option<Var> = None;
    for (pred, target) in preds.iter().zip(targets) {
        let y = g.constant(target.clone());
        let d = g.sub(*pred, y)?;
        let sq = g.mul(d, d)?;
        let weighted = g.mul(sq, w)?;
        let s = g.sum(weighted)?;
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s)?,
        });
    }
    let total = total.expect("at least one interval");
    Ok(g.scale(total, 1.0 / (3.0 * preds.len() as f64 * batch as f64))?)
}

/// `λ·mean(d_t)` over every interval and row. `gates[t]` is the `[batch × 1]`
/// visual slot of interval `t + 1`; the forced first interval counts as a
/// constant 1.
pub fn efficiency_loss(g: &mut Graph, gates: &[Var], batch: usize, lambda: f64) -> Result<Var, TrainError> {
    let intervals = gates.len() + 1;
    let mut total = g.constant(Tensor::scalar(batch as f64));
    for gate in gates {
        let s = g.sum(*gate)?;
        total = g.add(total, s)?;
    }
    Ok(g.scale(total, lambda / (intervals * batch) as f64)?)
}

/// Scalar form of [`pose_loss`] for one sequence of relative poses.
pub fn pose_loss_value(preds: &[RelPose], gts: &[RelPose], alpha: f64) -> Result<f64, TrainError> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(TrainError::LengthMismatch { pred: preds.len(), gt: gts.len() });
    }
    let s: f64 = preds.iter().zip(gts).map(|(p, y)| (p.v - y.v).norm_squared() + alpha * (p.phi - y.phi).norm_squared()).sum();
    Ok(s / (3.0 * preds.len() as f64))
}

/// Scalar form of [`efficiency_loss`].
pub fn efficiency_loss_value(decisions: &[bool], lambda: f64) -> f64 {
    if decisions.is_empty() {
        return 0.0;
    }
    lambda * decisions.iter().filter(|&&d| d).count() as f64 / decisions.len() as f64
}

pub fn joint_loss(g: &mut Graph, pose: Var, efficiency: Var) -> Result<Var, TrainError> {
    Ok(g.add(pose, efficiency)?)
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub lr: f64,
    pub tau: Option<f64>,
    pub loss: f64,
    pub pose_loss: f64,
    pub usage: f64,
}

pub fn log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("stage,epoch,lr,tau,loss,pose_loss,usage\n");
    for e in log {
        let tau = e.tau.map_or(String::new(), |t| format!("{t}"));
        out += &format!("{},{},{},{},{},{},{}\n", e.stage, e.epoch, e.lr, tau, e.loss, e.pose_loss, e.usage);
    }
    out
}

/// Every `(sequence, start)` whose window of `steps` intervals fits.
fn window_starts(seqs: &[Sequence], steps: usize) -> Vec<(usize, usize)> {
    seqs.iter()
        .enumerate()
        .flat_map(|(i, s)| (0..(s.len() + 1).saturating_sub(steps)).map(move |t| (i, t)))
        .collect()
}

struct Stage<'a> {
    name: &'a str,
    epochs: usize,
    lr: f64,
    mode: PolicyMode,
    /// Epoch index the temperature schedule starts from.
    tau_offset: usize,
    /// Parameters updated by the optimizer.
    mask: &'a [bool],
}

fn run_stage(
    model: &mut VioModel,
    seqs: &[Sequence],
    sched: &TrainSchedule,
    loss_cfg: &LossConfig,
    stage: &Stage,
    adam: &mut Adam,
    rng: &mut Rng,
) -> Result<Vec<EpochLog>, TrainError> {
    use rand::Rng as _;
    let steps = loss_cfg.intervals();
    let starts = window_starts(seqs, steps);
    if starts.is_empty() {
        return Err(TrainError::Config(format!("no training sequence has {steps} intervals")));
    }
    adam.set_lr(stage.lr);
    let learned = stage.mode.uses_policy();
    let mut log = Vec::with_capacity(stage.epochs);
    for epoch in 0..stage.epochs {
        let tau = learned.then(|| sched.temperature.at(stage.tau_offset + epoch));
        let opts = TrainOptions { mode: stage.mode, tau: tau.unwrap_or(1.0), gate: sched.gate };
        let (mut loss_sum, mut pose_sum, mut used, mut rows) = (0.0, 0.0, 0.0, 0usize);
        let nb = sched.batches_per_epoch();
        for step in 0..nb {
            let windows: Vec<(&Sequence, usize)> = (0..sched.batch_size)
                .map(|_| {
                    let (i, t) = starts[rng.random_range(0..starts.len())];
                    (&seqs[i], t)
                })
                .collect();
            let batch = Batch::new(&windows, steps, &model.normalizer)?;
            let mut g = Graph::new();
            let p = model.store.bind(&mut g);
            let tr = rollout_train(model, &mut g, &p, &batch, &opts, rng)?;
            let pose = pose_loss(&mut g, &tr.preds, &batch.targets, loss_cfg.alpha)?;
            let loss = if learned {
                let eff = efficiency_loss(&mut g, &tr.gates, batch.size, loss_cfg.lambda)?;
                joint_loss(&mut g, pose, eff)?
            } else {
                pose
            };
            let (lv, pv) = (g.value(loss).item(), g.value(pose).item());
            let diverged = || TrainError::Diverged { stage: stage.name.into(), epoch, step };
            if !lv.is_finite() {
                return Err(diverged());
            }
            let grads = g.backward(loss)?;
            let mut grads = p.gradients(&grads, &model.store);
            if grads.iter().any(|t| !t.is_finite()) {
                return Err(diverged());
            }
            clip_global_norm(&mut grads, sched.clip_norm);
            adam.step_masked(&mut model.store, &grads, stage.mask)?;
            loss_sum += lv;
            pose_sum += pv;
            used += tr.usage() * batch.size as f64;
            rows += batch.size;
        }
        let entry = EpochLog {
            stage: stage.name.into(),
            epoch,
            lr: stage.lr,
            tau,
            loss: loss_sum / nb as f64,
            pose_loss: pose_sum / nb as f64,
            usage: used / rows as f64,
        };
        log::info!(
            "{} epoch {}: loss {:.6} pose {:.6} usage {:.3}{}",
            entry.stage,
            epoch,
            entry.loss,
            entry.pose_loss,
            entry.usage,
            tau.map_or(String::new(), |t| format!(" tau {t:.4}"))
        );
        log.push(entry);
    }
    Ok(log)
}

fn check_setup(model: &VioModel, sched: &TrainSchedule, loss: &LossConfig) -> Result<(), TrainError> {
    sched.validate()?;
    loss.validate()?;
    model.config.validate()?;
    Ok(())
}

/// Warm-up: pose loss only, Bernoulli visual policy, policy network frozen.
pub fn warmup_train(
    model: &mut VioModel,
    seqs: &[Sequence],
    sched: &TrainSchedule,
    loss: &LossConfig,
    rng: &mut Rng,
) -> Result<Vec<EpochLog>, TrainError> {
    check_setup(model, sched, loss)?;
    let mask = model.non_policy_mask();
    let mut adam = Adam::new(AdamConfig { lr: sched.warmup.lr, ..AdamConfig::default() }, &model.store);
    let stage = Stage {
        name: "warmup",
        epochs: sched.warmup.epochs,
        lr: sched.warmup.lr,
        mode: PolicyMode::Bernoulli { p: sched.warmup_visual_p },
        tau_offset: 0,
        mask: &mask,
    };
    run_stage(model, seqs, sched, loss, &stage, &mut adam, rng)
}

/// End-to-end training with learned decisions (or with a fixed policy for the
/// baselines, in which case the policy network stays frozen and only the pose
/// loss applies). Joint stage, then fine-tuning at the lower rate.
pub fn joint_train(
    model: &mut VioModel,
    seqs: &[Sequence],
    sched: &TrainSchedule,
    loss: &LossConfig,
    mode: PolicyMode,
    rng: &mut Rng,
) -> Result<Vec<EpochLog>, TrainError> {
    check_setup(model, sched, loss)?;
    mode.validate()?;
    let mask = if mode.uses_policy() { vec![true; model.store.len()] } else { model.non_policy_mask() };
    let mut adam = Adam::new(AdamConfig { lr: sched.joint.lr, ..AdamConfig::default() }, &model.store);
    let mut log = run_stage(
        model,
        seqs,
        sched,
        loss,
        &Stage { name: "joint", epochs: sched.joint.epochs, lr: sched.joint.lr, mode, tau_offset: 0, mask: &mask },
        &mut adam,
        rng,
    )?;
    log.extend(run_stage(
        model,
        seqs,
        sched,
        loss,
        &Stage {
            name: "finetune",
            epochs: sched.finetune.epochs,
            lr: sched.finetune.lr,
            mode,
            tau_offset: sched.joint.epochs,
            mask: &mask,
        },
        &mut adam,
        rng,
    )?);
    Ok(log)
}
