use serde::Serialize;

use super::TrainError;
use crate::geometry::{accumulate, kitti_rel_errors, rmse, GeometryError, RelPose};
use crate::model::{rollout, PolicyMode, RolloutResult, VioModel};
use crate::seeded_rng;
use crate::simkit::Sequence;

/// Metrics of one evaluation pass over the test sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// Fraction of intervals that ran the visual encoder.
    pub usage: f64,
    pub flops_per_step: f64,
    /// Meters per interval.
    pub trans_rmse: f64,
    /// Degrees per interval.
    pub rot_rmse: f64,
    /// Percent, mean over all segments of all sequences.
    pub t_rel: f64,
    /// Degrees per 100 m.
    pub r_rel: f64,
}

impl Metrics {
    fn to_array(self) -> [f64; 6] {
        [self.usage, self.flops_per_step, self.trans_rmse, self.rot_rmse, self.t_rel, self.r_rel]
    }

    fn from_array(a: [f64; 6]) -> Self {
        Self { usage: a[0], flops_per_step: a[1], trans_rmse: a[2], rot_rmse: a[3], t_rel: a[4], r_rel: a[5] }
    }
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub metrics: Metrics,
    /// One rollout per evaluated sequence, in input order.
    pub rollouts: Vec<RolloutResult>,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub label: String,
    pub mode: PolicyMode,
    /// CRC-32 of the experiment configuration that produced the model.
    pub fingerprint: String,
    pub sequence_ids: Vec<usize>,
    pub seeds: Vec<SeedResult>,
    pub mean: Metrics,
    /// Sample standard deviation across seeds; absent for a single seed.
    pub std: Option<Metrics>,
}

/// Mean and sample standard deviation (two-pass, `n − 1` denominator).
pub fn mean_std_sample(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, None);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (m, None);
    }
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (m, Some((ss / (n - 1) as f64).sqrt()))
}

/// Rollout stream for one (seed, sequence) pair.
fn rollout_seed(seed: u64, seq_id: usize) -> u64 {
    seed ^ (seq_id as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn metrics(seqs: &[Sequence], rollouts: &[RolloutResult]) -> Result<Metrics, TrainError> {
    let (mut preds, mut gts): (Vec<RelPose>, Vec<RelPose>) = (Vec::new(), Vec::new());
    let (mut used, mut steps, mut flops) = (0usize, 0usize, 0u64);
    let mut segments = Vec::new();
    for (seq, r) in seqs.iter().zip(rollouts) {
        preds.extend(&r.preds);
        gts.extend(seq.gt_rels());
        used += r.decisions.iter().filter(|&&d| d).count();
        steps += r.decisions.len();
        flops += r.flops;
        let pred = accumulate(&seq.initial_pose, &r.preds).map_err(geometry_err)?;
        let gt = seq.gt_trajectory().map_err(geometry_err)?;
        match kitti_rel_errors(&pred, &gt) {
            Ok(e) => segments.extend(e.segments),
            Err(GeometryError::NoSegments) => {}
            Err(e) => return Err(geometry_err(e)),
        }
    }
    let (t, r) = rmse(&preds, &gts).map_err(geometry_err)?;
    let n = segments.len() as f64;
    let (t_rel, r_rel) = if segments.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            segments.iter().map(|s| s.t_err_pct).sum::<f64>() / n,
            segments.iter().map(|s| s.r_err_deg_per_100m).sum::<f64>() / n,
        )
    };
    Ok(Metrics {
        usage: used as f64 / steps as f64,
        flops_per_step: flops as f64 / steps as f64,
        trans_rmse: t,
        rot_rmse: r.to_degrees(),
        t_rel,
        r_rel,
    })
}

fn geometry_err(e: GeometryError) -> TrainError {
    TrainError::Config(format!("evaluation geometry: {e}"))
}

/// Rolls out every sequence once per seed; segment errors are pooled over
/// all sequences of a seed.
pub fn evaluate(
    model: &VioModel,
    seqs: &[Sequence],
    mode: PolicyMode,
    seeds: &[u64],
    label: &str,
    fingerprint: &str,
) -> Result<RunReport, TrainError> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    evaluate_on(model, seqs, mode, seeds, label, fingerprint, workers)
}

pub(super) fn evaluate_on(
    model: &VioModel,
    seqs: &[Sequence],
    mode: PolicyMode,
    seeds: &[u64],
    label: &str,
    fingerprint: &str,
    workers: usize,
) -> Result<RunReport, TrainError> {
    if seqs.is_empty() || seeds.is_empty() {
        return Err(TrainError::Config("evaluation needs at least one sequence and one seed".into()));
    }
    let run_seed = |seed: u64| -> Result<SeedResult, TrainError> {
        let rollouts = seqs
            .iter()
            .map(|s| rollout(model, s, mode, &mut seeded_rng(rollout_seed(seed, s.id))))
            .collect::<Result<Vec<_>, _>>()?;
        let m = metrics(seqs, &rollouts)?;
        log::info!("{label} seed {seed}: usage {:.4} t_rel {:.3} trans_rmse {:.5}", m.usage, m.t_rel, m.trans_rmse);
        Ok(SeedResult { seed, metrics: m, rollouts })
    };
    // Seeds are independent given the read-only model; results keep seed order.
    let workers = workers.clamp(1, seeds.len());
    let results = if workers <= 1 {
        seeds.iter().map(|&s| run_seed(s)).collect::<Result<Vec<_>, _>>()?
    } else {
        let chunk = seeds.len().div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .chunks(chunk)
                .map(|part| scope.spawn(|| part.iter().map(|&s| run_seed(s)).collect::<Result<Vec<_>, _>>()))
                .collect();
            let mut out = Vec::with_capacity(seeds.len());
            for h in handles {
                out.extend(h.join().expect("evaluation worker panicked")?);
            }
            Ok::<_, TrainError>(out)
        })?
    };
    let cols: Vec<[f64; 6]> = results.iter().map(|r| r.metrics.to_array()).collect();
    let stats: Vec<(f64, Option<f64>)> = (0..6).map(|k| mean_std_sample(&cols.iter().map(|c| c[k]).collect::<Vec<_>>())).collect();
    let mean = Metrics::from_array(std::array::from_fn(|k| stats[k].0));
    let std = stats[0].1.map(|_| Metrics::from_array(std::array::from_fn(|k| stats[k].1.unwrap_or(0.0))));
    Ok(RunReport {
        label: label.into(),
        mode,
        fingerprint: fingerprint.into(),
        sequence_ids: seqs.iter().map(|s| s.id).collect(),
        seeds: results,
        mean,
        std,
    })
}

const REPORT_HEADER: &str =
    "label,mode,seed,usage_pct,flops_per_step,trans_rmse_m,rot_rmse_deg,t_rel_pct,r_rel_deg_per_100m,fingerprint\n";

fn report_row(out: &mut String, r: &RunReport, seed: &str, m: &Metrics) {
    out.push_str(&format!(
        "{},{},{},{:.4},{:.1},{:.6},{:.6},{:.4},{:.4},{}\n",
        r.label,
        r.mode,
        seed,
        100.0 * m.usage,
        m.flops_per_step,
        m.trans_rmse,
        m.rot_rmse,
        m.t_rel,
        m.r_rel,
        r.fingerprint
    ));
}

/// One row per seed, then `mean` and (with two or more seeds) `std` rows.
pub fn report_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    for r in reports {
        for s in &r.seeds {
            report_row(&mut out, r, &s.seed.to_string(), &s.metrics);
        }
        report_row(&mut out, r, "mean", &r.mean);
        if let Some(std) = &r.std {
            report_row(&mut out, r, "std", std);
        }
    }
    out
}
