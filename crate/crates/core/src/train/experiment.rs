//! Pipelines shared by the command line and the acceptance suite.

use super::{evaluate, joint_train, warmup_train, EpochLog, RunReport, TrainError};
use crate::config::ExperimentConfig;
use crate::model::{PolicyMode, VioModel, Normalizer};
use crate::seeded_rng;
use crate::simkit::{generate_dataset, Dataset};

// Stream tags mixed into the master seed.
const INIT_STREAM: u64 = 0x1A17;
const WARMUP_STREAM: u64 = 0xBA5E_0000;
const JOINT_STREAM: u64 = 0x7017_0000;
const BASELINE_STREAM: u64 = 0xBA5E_11E0_0000;

/// Generates the dataset of `cfg` and splits it by sequence.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset), TrainError> {
    let ds = generate_dataset(&cfg.sim, cfg.seed, cfg.data.sequences)?;
    Ok(ds.split(cfg.data.train_fraction))
}

#[derive(Debug, Clone)]
pub struct WarmupResult {
    pub model: VioModel,
    pub log: Vec<EpochLog>,
    /// Final-epoch pose loss; the λ ladder is expressed in units of it.
    pub l0: f64,
}

/// Fresh model, normalizer fitted on `train`, warm-up stage.
pub fn warmup(cfg: &ExperimentConfig, train: &Dataset) -> Result<WarmupResult, TrainError> {
    let mut model = VioModel::new(cfg.model.clone(), cfg.seed ^ INIT_STREAM)?;
    model.normalizer = Normalizer::fit(train);
    let log = warmup_train(&mut model, &train.sequences, &cfg.schedule, &cfg.loss, &mut seeded_rng(cfg.seed ^ WARMUP_STREAM))?;
    let l0 = log.last().map_or(f64::NAN, |e| e.pose_loss);
    Ok(WarmupResult { model, log, l0 })
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub fraction: f64,
    pub lambda: f64,
    pub model: VioModel,
    pub log: Vec<EpochLog>,
    pub report: RunReport,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub l0: f64,
    pub entries: Vec<SweepEntry>,
}

impl SweepResult {
    pub fn reports(&self) -> Vec<RunReport> {
        self.entries.iter().map(|e| e.report.clone()).collect()
    }
}

/// Trains one joint model per ladder entry, each from the same warm-up.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    warm: &WarmupResult,
    train: &Dataset,
    test: &Dataset,
) -> Result<SweepResult, TrainError> {
    let mut entries = Vec::with_capacity(cfg.sweep.ladder.len());
    for (i, &fraction) in cfg.sweep.ladder.iter().enumerate() {
        let lambda = fraction * warm.l0;
        let (model, log, report) = train_and_evaluate(cfg, warm, train, test, PolicyMode::Learned, lambda, JOINT_STREAM + i as u64)?;
        entries.push(SweepEntry { fraction, lambda, model, log, report });
    }
    Ok(SweepResult { l0: warm.l0, entries })
}

/// One joint run from the warm-up at `cfg.loss.lambda` under `mode`,
/// evaluated on `test`.
pub fn train_single(
    cfg: &ExperimentConfig,
    warm: &WarmupResult,
    train: &Dataset,
    test: &Dataset,
    mode: PolicyMode,
) -> Result<(VioModel, Vec<EpochLog>, RunReport), TrainError> {
    train_and_evaluate(cfg, warm, train, test, mode, cfg.loss.lambda, JOINT_STREAM)
}

fn train_and_evaluate(
    cfg: &ExperimentConfig,
    warm: &WarmupResult,
    train: &Dataset,
    test: &Dataset,
    mode: PolicyMode,
    lambda: f64,
    stream: u64,
) -> Result<(VioModel, Vec<EpochLog>, RunReport), TrainError> {
    let mut model = warm.model.clone();
    let loss = crate::train::LossConfig { lambda, ..cfg.loss };
    let log = joint_train(&mut model, &train.sequences, &cfg.schedule, &loss, mode, &mut seeded_rng(cfg.seed ^ stream))?;
    let label = match mode {
        PolicyMode::Learned => format!("lambda={lambda:.6e}"),
        other => other.to_string(),
    };
    let report = evaluate(&model, &test.sequences, mode, &cfg.eval.seeds, &label, &cfg.fingerprint())?;
    Ok((model, log, report))
}

/// Regular skipping and Bernoulli policies with the same mean usage `u`:
/// `n = round(1/u)`, `p = u`.
pub fn matched_baselines(usage: f64) -> (PolicyMode, PolicyMode) {
    let n = (1.0 / usage.max(1e-9)).round().max(1.0) as usize;
    (PolicyMode::Regular { n }, PolicyMode::Bernoulli { p: usage.clamp(0.0, 1.0) })
}

#[derive(Debug, Clone)]
pub struct BaselineComparison {
    pub learned: RunReport,
    pub regular: RunReport,
    pub bernoulli: RunReport,
    /// `|usage(learned) − usage(regular)|`, absolute fraction.
    pub regular_gap: f64,
    pub bernoulli_gap: f64,
}

impl BaselineComparison {
    /// Seeds where the learned policy has lower `t_rel` than both baselines
    /// (the regular policy is deterministic; its mean is used).
    pub fn wins(&self) -> usize {
        self.learned
            .seeds
            .iter()
            .zip(&self.bernoulli.seeds)
            .filter(|(l, b)| l.metrics.t_rel < b.metrics.t_rel && l.metrics.t_rel < self.regular.mean.t_rel)
            .count()
    }
}

/// Retrains from the warm-up under each matched fixed policy with the same
/// joint schedule (policy network frozen, pose loss only) and evaluates it
/// with the learned model's seeds.
pub fn compare_baselines(
    cfg: &ExperimentConfig,
    warm: &WarmupResult,
    train: &Dataset,
    test: &Dataset,
    learned: &SweepEntry,
) -> Result<BaselineComparison, TrainError> {
    let (regular, bernoulli) = matched_baselines(learned.report.mean.usage);
    let (_, _, reg) = train_and_evaluate(cfg, warm, train, test, regular, 0.0, BASELINE_STREAM)?;
    let (_, _, ber) = train_and_evaluate(cfg, warm, train, test, bernoulli, 0.0, BASELINE_STREAM + 1)?;
    let u = learned.report.mean.usage;
    Ok(BaselineComparison {
        learned: learned.report.clone(),
        regular_gap: (reg.mean.usage - u).abs(),
        bernoulli_gap: (ber.mean.usage - u).abs(),
        regular: reg,
        bernoulli: ber,
    })
}
