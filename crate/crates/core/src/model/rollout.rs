use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{ModelError, Normalizer, RnnState, VioModel};
use crate::geometry::RelPose;
use crate::gumbel::{gumbel_softmax, sample_gumbel, straight_through_decision};
use crate::nn::Binding;
use crate::simkit::{Sequence, IMU_CHANNELS};
use crate::tensor::{Graph, Tensor, Var};
use crate::Rng;

/// Who decides whether the visual encoder runs at intervals `t ≥ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyMode {
    Learned,
    /// Independent draws with `P(visual) = p`.
    Bernoulli { p: f64 },
    /// Visual at every `n`-th interval.
    Regular { n: usize },
    Always,
}

impl PolicyMode {
    pub fn uses_policy(&self) -> bool {
        matches!(self, PolicyMode::Learned)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        match *self {
            PolicyMode::Regular { n: 0 } => Err(ModelError::Period(0)),
            PolicyMode::Bernoulli { p } if !(0.0..=1.0).contains(&p) => Err(ModelError::Probability(p)),
            _ => Ok(()),
        }
    }

    /// Decision and its probability for a non-learned mode at interval `t ≥ 1`.
    fn fixed(&self, t: usize, rng: &mut Rng) -> (bool, f64) {
        match *self {
            PolicyMode::Bernoulli { p } => (rng.random::<f64>() < p, p),
            PolicyMode::Regular { n } => {
                let d = t % n == 0;
                (d, if d { 1.0 } else { 0.0 })
            }
            PolicyMode::Always => (true, 1.0),
            PolicyMode::Learned => unreachable!("learned decisions come from the policy"),
        }
    }
}

impl fmt::Display for PolicyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyMode::Learned => write!(f, "learned"),
            PolicyMode::Bernoulli { p } => write!(f, "bernoulli:{p}"),
            PolicyMode::Regular { n } => write!(f, "regular:{n}"),
            PolicyMode::Always => write!(f, "always"),
        }
    }
}

impl FromStr for PolicyMode {
    type Err = String;

    /// `learned`, `always`, `bernoulli:<p>` or `regular:<n>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, arg) = s.split_once(':').map_or((s, None), |(k, a)| (k, Some(a)));
        let mode = match (kind, arg) {
            ("learned", None) => PolicyMode::Learned,
            ("always", None) => PolicyMode::Always,
            ("bernoulli", Some(a)) => PolicyMode::Bernoulli { p: a.parse().map_err(|e| format!("bad probability: {e}"))? },
            ("regular", Some(a)) => PolicyMode::Regular { n: a.parse().map_err(|e| format!("bad period: {e}"))? },
            _ => return Err(format!("unknown policy mode `{s}`")),
        };
        mode.validate().map_err(|e| e.to_string())?;
        Ok(mode)
    }
}

/// How the learned gate enters the forward pass during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateGrad {
    /// Hard one-hot forward, Gumbel-Softmax backward.
    #[default]
    StraightThrough,
    /// Soft Gumbel-Softmax value in the forward pass as well.
    Relaxed,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub mode: PolicyMode,
    pub tau: f64,
    pub gate: GateGrad,
}

/// Stacked subsequences: for each interval, normalized inputs and raw targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    /// `[batch × 6 × window]` per interval.
    pub imu: Vec<Tensor>,
    /// `[batch × visual_in]` per interval.
    pub visual: Vec<Tensor>,
    /// `[batch × 6]` per interval, raw `(φ, v)`.
    pub targets: Vec<Tensor>,
}

impl Batch {
    /// `windows[b] = (sequence, first interval)`; each window spans `steps`
    /// intervals.
    pub fn new(windows: &[(&Sequence, usize)], steps: usize, norm: &Normalizer) -> Result<Self, ModelError> {
        if windows.is_empty() || steps == 0 {
            return Err(ModelError::EmptySequence);
        }
        let size = windows.len();
        let wlen = windows[0].0.samples[windows[0].1].imu.len;
        let vdim = windows[0].0.samples[windows[0].1].visual.len();
        let (mut imu, mut visual, mut targets) = (Vec::new(), Vec::new(), Vec::new());
        for t in 0..steps {
            let (mut i, mut v, mut y) = (Vec::new(), Vec::new(), Vec::new());
            for (seq, start) in windows {
                let s = seq.samples.get(start + t).ok_or(ModelError::EmptySequence)?;
                if s.imu.len != wlen {
                    return Err(ModelError::Window { expected: wlen, got: s.imu.len });
                }
                i.extend(norm.imu(&s.imu));
                v.extend(norm.visual(&s.visual));
                y.extend(s.gt_rel.to_array());
            }
            imu.push(Tensor::new(&[size, IMU_CHANNELS, wlen], i)?);
            visual.push(Tensor::new(&[size, vdim], v)?);
            targets.push(Tensor::new(&[size, 6], y)?);
        }
        Ok(Self { size, imu, visual, targets })
    }

    pub fn steps(&self) -> usize {
        self.imu.len()
    }
}

/// Graph handles of a training rollout.
#[derive(Debug, Clone)]
pub struct TrainRollout {
    /// `[batch × 6]` per interval, raw units.
    pub preds: Vec<Var>,
    /// `[batch × 1]` visual gate per interval `t ≥ 1`.
    pub gates: Vec<Var>,
    /// `decisions[t][b]`, interval 0 included.
    pub decisions: Vec<Vec<bool>>,
    /// `P(visual)` per interval `t ≥ 1` and row.
    pub probs: Vec<Vec<f64>>,
    /// Gated cost of the decisions taken, summed over rows and intervals. The
    /// policy is charged at every interval in learned mode.
    pub flops: u64,
}

impl TrainRollout {
    /// Fraction of intervals (the forced first one included) that used the
    /// visual encoder.
    pub fn usage(&self) -> f64 {
        let rows: Vec<&bool> = self.decisions.iter().flatten().collect();
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().filter(|d| ***d).count() as f64 / rows.len() as f64
    }
}

fn tile(row: &[f64], batch: usize) -> Tensor {
    let data = (0..batch).flat_map(|_| row.iter().copied()).collect();
    Tensor::new(&[batch, row.len()], data).expect("tile shape matches data")
}

/// Head output back to raw `(φ, v)`.
fn denormalize(g: &mut Graph, out: Var, std: Var, mean: Var) -> Result<Var, ModelError> {
    let scaled = g.mul(out, std)?;
    Ok(g.add(scaled, mean)?)
}

/// Batched differentiable rollout over every interval of `batch`.
pub fn rollout_train(
    model: &VioModel,
    g: &mut Graph,
    p: &Binding,
    batch: &Batch,
    opts: &TrainOptions,
    rng: &mut Rng,
) -> Result<TrainRollout, ModelError> {
    opts.mode.validate()?;
    let steps = batch.steps();
    if steps == 0 {
        return Err(ModelError::EmptySequence);
    }
    let b = batch.size;
    let fv = model.config.visual_feat;
    let table = model.flops();
    let learned = opts.mode.uses_policy();
    let std = g.constant(tile(&model.normalizer.target_std, b));
    let mean = g.constant(tile(&model.normalizer.target_mean, b));
    let mut state = model.rnn.zero_state(g, b);
    let mut out = TrainRollout {
        preds: Vec::with_capacity(steps),
        gates: Vec::with_capacity(steps),
        decisions: Vec::with_capacity(steps),
        probs: Vec::with_capacity(steps),
        flops: 0,
    };
    for t in 0..steps {
        let imu = g.constant(batch.imu[t].clone());
        let x_i = model.inertial.forward(g, p, imu)?;
        let (gate, decisions, probs) = if t == 0 {
            (None, vec![true; b], None)
        } else if learned {
            let logits = model.policy.logits(g, p, state.l2.h, x_i)?;
            let log_p = g.log_softmax(logits, 1)?;
            let probs: Vec<f64> = g.value(log_p).data().chunks(2).map(|r| r[0].exp()).collect();
            let (choice, decisions) = match opts.gate {
                GateGrad::StraightThrough => {
                    let s = straight_through_decision(g, log_p, opts.tau, rng)?;
                    let d = s.indices().iter().map(|&i| i == 0).collect();
                    (s.output, d)
                }
                GateGrad::Relaxed => {
                    let noise: Vec<f64> = (0..b).flat_map(|_| sample_gumbel(2, rng)).collect();
                    let noise = Tensor::new(&[b, 2], noise)?;
                    let soft = gumbel_softmax(g, log_p, &noise, opts.tau)?;
                    let d = g.value(soft).data().chunks(2).map(|r| r[0] >= r[1]).collect();
                    (soft, d)
                }
            };
            (Some(g.slice(choice, 1, 0..1)?), decisions, Some(probs))
        } else {
            let (d, pr): (Vec<bool>, Vec<f64>) = (0..b).map(|_| opts.mode.fixed(t, rng)).unzip();
            let col = Tensor::new(&[b, 1], d.iter().map(|&x| if x { 1.0 } else { 0.0 }).collect())?;
            (Some(g.constant(col)), d, Some(pr))
        };

        let any = decisions.iter().any(|&d| d);
        let all = decisions.iter().all(|&d| d);
        let z_v = match gate {
            None => {
                let v = g.constant(batch.visual[t].clone());
                model.visual.forward(g, p, v)?
            }
            // A constant all-zero gate: the encoder output would be discarded.
            Some(_) if !learned && !any => g.constant(Tensor::zeros(&[b, fv])),
            Some(_) if !learned && all => {
                let v = g.constant(batch.visual[t].clone());
                model.visual.forward(g, p, v)?
            }
            Some(gate) => {
                let v = g.constant(batch.visual[t].clone());
                let x_v = model.visual.forward(g, p, v)?;
                let wide = g.expand(gate, 1, fv)?;
                g.mul(wide, x_v)?
            }
        };
        let z = g.concat(z_v, x_i, 1)?;
        let (next, y) = model.rnn.step(g, p, z, state)?;
        state = next;
        out.preds.push(denormalize(g, y, std, mean)?);
        out.flops += decisions.iter().map(|&d| table.step(d, learned)).sum::<u64>();
        if let Some(gate) = gate {
            out.gates.push(gate);
        }
        if let Some(pr) = probs {
            out.probs.push(pr);
        }
        out.decisions.push(decisions);
    }
    Ok(out)
}

/// Per-interval record of a full-sequence rollout.
#[derive(Debug, Clone)]
pub struct RolloutResult {
    pub mode: PolicyMode,
    /// Visual encoder ran at interval `t`; always `true` at `t = 0`.
    pub decisions: Vec<bool>,
    /// `P(visual)` at each interval. In learned mode the policy is evaluated
    /// at `t = 0` too, but its draw is overridden.
    pub probs: Vec<f64>,
    pub preds: Vec<RelPose>,
    /// Top-layer LSTM hidden state after each interval.
    pub hidden: Vec<Vec<f64>>,
    /// Fraction of intervals with visual, `t = 0` included.
    pub usage: f64,
    pub flops: u64,
}

impl RolloutResult {
    pub fn flops_per_step(&self) -> f64 {
        self.flops as f64 / self.decisions.len().max(1) as f64
    }
}

/// Sequential inference over a whole sequence with one continuous hidden
/// state. The visual encoder is not evaluated at skipped intervals.
pub fn rollout(model: &VioModel, seq: &Sequence, mode: PolicyMode, rng: &mut Rng) -> Result<RolloutResult, ModelError> {
    mode.validate()?;
    if seq.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let norm = &model.normalizer;
    let table = model.flops();
    let learned = mode.uses_policy();
    let mut g = Graph::new();
    let p = model.store.bind_frozen(&mut g);
    let std = g.constant(tile(&norm.target_std, 1));
    let mean = g.constant(tile(&norm.target_mean, 1));
    let base = g.len();
    let hidden = model.config.hidden;
    let mut h1 = (Tensor::zeros(&[1, hidden]), Tensor::zeros(&[1, hidden]));
    let mut h2 = h1.clone();
    let n = seq.len();
    let mut res = RolloutResult {
        mode,
        decisions: Vec::with_capacity(n),
        probs: Vec::with_capacity(n),
        preds: Vec::with_capacity(n),
        hidden: Vec::with_capacity(n),
        usage: 0.0,
        flops: 0,
    };
    for (t, s) in seq.samples.iter().enumerate() {
        g.truncate(base);
        let state = RnnState {
            l1: crate::nn::LstmState { h: g.constant(h1.0.clone()), c: g.constant(h1.1.clone()) },
            l2: crate::nn::LstmState { h: g.constant(h2.0.clone()), c: g.constant(h2.1.clone()) },
        };
        let imu = g.constant(Tensor::new(&[1, IMU_CHANNELS, s.imu.len], norm.imu(&s.imu))?);
        let x_i = model.inertial.forward(&mut g, &p, imu)?;
        let (d, prob) = if learned {
            let logits = model.policy.logits(&mut g, &p, state.l2.h, x_i)?;
            let probs = g.softmax(logits, 1)?;
            let pv = g.value(probs).data()[0];
            (t == 0 || rng.random::<f64>() < pv, pv)
        } else if t == 0 {
            (true, 1.0)
        } else {
            mode.fixed(t, rng)
        };
        let x_v = if d {
            let v = g.constant(Tensor::new(&[1, s.visual.len()], norm.visual(&s.visual))?);
            Some(model.visual.forward(&mut g, &p, v)?)
        } else {
            None
        };
        let z = super::fuse(&mut g, x_v, x_i, d, model.config.visual_feat)?;
        let (next, y) = model.rnn.step(&mut g, &p, z, state)?;
        let pred = denormalize(&mut g, y, std, mean)?;
        res.preds.push(RelPose::from_slice(g.value(pred).data()));
        res.hidden.push(g.value(next.l2.h).data().to_vec());
        h1 = (g.value(next.l1.h).clone(), g.value(next.l1.c).clone());
        h2 = (g.value(next.l2.h).clone(), g.value(next.l2.c).clone());
        res.flops += table.step(d, learned);
        res.decisions.push(d);
        res.probs.push(prob);
    }
    res.usage = res.decisions.iter().filter(|&&d| d).count() as f64 / n as f64;
    Ok(res)
}
