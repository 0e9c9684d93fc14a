use super::svg;
use super::{RunReport, TrainError};
use crate::model::RolloutResult;
use crate::simkit::Sequence;

/// Speed bin edges, m/s: `[0, 2), [2, 4), …, [14, 16)`.
pub const SPEED_EDGES: [f64; 9] = [0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0];
/// Angular-velocity bin edges, rad/s: `[0, 0.1), …, [0.6, 0.7)`.
pub const YAW_EDGES: [f64; 8] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7];
/// Centered moving-average window of the local usage column.
pub const TRACE_WINDOW: usize = 31;

/// Half-open bin containing `value`, or `None` outside `[edges[0], last)`.
pub fn bin_index(value: f64, edges: &[f64]) -> Option<usize> {
    edges.windows(2).position(|w| w[0] <= value && value < w[1])
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub used: usize,
}

impl BinStat {
    /// `None` for an empty bin.
    pub fn usage(&self) -> Option<f64> {
        (self.count > 0).then(|| self.used as f64 / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UsageTables {
    pub speed: Vec<BinStat>,
    pub yaw_rate: Vec<BinStat>,
}

fn empty_bins(edges: &[f64]) -> Vec<BinStat> {
    edges.windows(2).map(|w| BinStat { lo: w[0], hi: w[1], count: 0, used: 0 }).collect()
}

fn occupied(bins: &[BinStat]) -> (Vec<f64>, Vec<f64>) {
    bins.iter().filter_map(|b| b.usage().map(|u| (0.5 * (b.lo + b.hi), u))).unzip()
}

impl UsageTables {
    /// Rank correlation between bin center and usage over occupied speed bins.
    pub fn speed_spearman(&self) -> Option<f64> {
        let (x, y) = occupied(&self.speed);
        spearman(&x, &y)
    }

    pub fn yaw_spearman(&self) -> Option<f64> {
        let (x, y) = occupied(&self.yaw_rate);
        spearman(&x, &y)
    }

    /// `table,lo,hi,count,usage`; empty bins leave `usage` blank.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("table,lo,hi,count,usage\n");
        for (name, bins) in [("speed", &self.speed), ("yaw_rate", &self.yaw_rate)] {
            for b in bins {
                let u = b.usage().map_or(String::new(), |u| format!("{u:.6}"));
                out += &format!("{name},{},{},{},{u}\n", b.lo, b.hi, b.count);
            }
        }
        out
    }

    pub fn to_svg(&self) -> String {
        let panel = |bins: &[BinStat], unit: &str| -> Vec<(String, Option<f64>)> {
            bins.iter().map(|b| (format!("{}-{}{unit}", b.lo, b.hi), b.usage())).collect()
        };
        svg::bar_panels(&[
            ("usage vs angular velocity (rad/s)", panel(&self.yaw_rate, "")),
            ("usage vs speed (m/s)", panel(&self.speed, "")),
        ])
    }
}

fn find_sequence(seqs: &[Sequence], id: usize) -> Result<&Sequence, TrainError> {
    seqs.iter().find(|s| s.id == id).ok_or(TrainError::UnknownSequence(id))
}

/// Pools every seed and sequence of `report`. The forced first interval is
/// not a policy decision and is left out.
pub fn usage_analysis(report: &RunReport, seqs: &[Sequence]) -> Result<UsageTables, TrainError> {
    let mut speed = empty_bins(&SPEED_EDGES);
    let mut yaw = empty_bins(&YAW_EDGES);
    for seed in &report.seeds {
        for (id, r) in report.sequence_ids.iter().zip(&seed.rollouts) {
            let seq = find_sequence(seqs, *id)?;
            for (s, &d) in seq.samples.iter().zip(&r.decisions).skip(1) {
                for (bins, value, edges) in
                    [(&mut speed, s.gt_speed, &SPEED_EDGES[..]), (&mut yaw, s.gt_yaw_rate.abs(), &YAW_EDGES[..])]
                {
                    if let Some(i) = bin_index(value, edges) {
                        bins[i].count += 1;
                        bins[i].used += usize::from(d);
                    }
                }
            }
        }
    }
    Ok(UsageTables { speed, yaw_rate: yaw })
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        // Ties share the mean of their positions.
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties; `None` when fewer
/// than two points or either side is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

/// Centered moving average; near the ends the window shrinks to the
/// available frames.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..xs.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(xs.len());
            xs[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub p: f64,
    pub d: bool,
    pub speed: f64,
    pub yaw_rate: f64,
    pub local_usage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTrace {
    pub sequence_id: usize,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
}

impl DecisionTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,p,d,speed,yaw_rate,local_usage\n");
        for r in &self.rows {
            out += &format!("{},{:.6},{},{:.4},{:.5},{:.4}\n", r.t, r.p, u8::from(r.d), r.speed, r.yaw_rate, r.local_usage);
        }
        out
    }

    pub fn to_svg(&self) -> String {
        svg::trace(
            &format!("sequence {} seed {}", self.sequence_id, self.seed),
            &self.rows.iter().map(|r| (r.p, r.d, r.local_usage, r.speed)).collect::<Vec<_>>(),
        )
    }
}

/// Per-interval `p_t`, `d_t` and motion of one sequence under one seed of
/// `report`, with the 31-frame local usage.
pub fn decision_trace(
    report: &RunReport,
    seqs: &[Sequence],
    sequence_id: usize,
    seed_index: usize,
) -> Result<DecisionTrace, TrainError> {
    let pos = report
        .sequence_ids
        .iter()
        .position(|&id| id == sequence_id)
        .ok_or(TrainError::UnknownSequence(sequence_id))?;
    let seq = find_sequence(seqs, sequence_id)?;
    let seed = report
        .seeds
        .get(seed_index)
        .ok_or_else(|| TrainError::Config(format!("report has no seed index {seed_index}")))?;
    let r = &seed.rollouts[pos];
    let d: Vec<f64> = r.decisions.iter().map(|&d| if d { 1.0 } else { 0.0 }).collect();
    let local = moving_average(&d, TRACE_WINDOW);
    let rows = seq
        .samples
        .iter()
        .enumerate()
        .map(|(t, s)| TraceRow {
            t,
            p: r.probs[t],
            d: r.decisions[t],
            speed: s.gt_speed,
            yaw_rate: s.gt_yaw_rate,
            local_usage: local[t],
        })
        .collect();
    Ok(DecisionTrace { sequence_id, seed: seed.seed, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ResetStats {
    /// Policy-made activations (`t ≥ 1`) with a following interval.
    pub firings: usize,
    /// Of those, how many were followed by a lower `p`.
    pub resets: usize,
}

impl ResetStats {
    pub fn rate(&self) -> Option<f64> {
        (self.firings > 0).then(|| self.resets as f64 / self.firings as f64)
    }
}

/// Counts firings `d_t = 1` after which `p_{t+1} < p_t`.
pub fn reset_rate<'a>(rollouts: impl IntoIterator<Item = &'a RolloutResult>) -> ResetStats {
    let mut s = ResetStats::default();
    for r in rollouts {
        for t in 1..r.decisions.len().saturating_sub(1) {
            if r.decisions[t] {
                s.firings += 1;
                s.resets += usize::from(r.probs[t + 1] < r.probs[t]);
            }
        }
    }
    s
}
