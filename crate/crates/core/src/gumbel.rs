//! Gumbel-Max sampling, the Gumbel-Softmax relaxation and the straight-through
//! decision used to train the gating policy.
//!
//! Policies are handled in log space: callers pass `log_softmax(logits)` so
//! that `log p` is finite even when a probability underflows.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Graph, Tensor, TensorError, Var};
use crate::Rng;

/// Lower clamp for the uniform draw; the upper clamp is `1 − U_CLAMP`.
pub const U_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GumbelError {
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Maps a uniform draw to standard Gumbel noise, `−log(−log u)`, with `u`
/// clamped to `[1e-12, 1 − 1e-12]`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(U_CLAMP, 1.0 - U_CLAMP);
    -(-u.ln()).ln()
}

/// `k` independent standard Gumbel draws.
pub fn sample_gumbel(k: usize, rng: &mut Rng) -> Vec<f64> {
    (0..k).map(|_| gumbel_from_uniform(rng.random::<f64>())).collect()
}

/// `argmax_k (log_p[k] + g[k])`, ties to the lower index.
pub fn gumbel_max(log_p: &[f64], g: &[f64]) -> usize {
    assert_eq!(log_p.len(), g.len(), "gumbel_max: length mismatch");
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (k, (lp, gk)) in log_p.iter().zip(g).enumerate() {
        let v = lp + gk;
        if v > best_val {
            best = k;
            best_val = v;
        }
    }
    best
}

/// `softmax((log_p + noise) / τ)` along the last axis of `[batch × K]`,
/// recorded in the graph so gradients reach `log_p`.
pub fn gumbel_softmax(g: &mut Graph, log_p: Var, noise: &Tensor, tau: f64) -> Result<Var, GumbelError> {
    if !(tau > 0.0) {
        return Err(GumbelError::Temperature(tau));
    }
    let n = g.constant(noise.clone());
    let perturbed = g.add(log_p, n)?;
    let scaled = g.scale(perturbed, 1.0 / tau)?;
    let axis = g.shape(log_p).len() - 1;
    Ok(g.softmax(scaled, axis)?)
}

/// One straight-through draw for a batch of categorical policies.
#[derive(Debug, Clone)]
pub struct DecisionSample {
    /// One-hot rows, `[batch × K]`.
    pub hard: Tensor,
    /// Gumbel-Softmax rows built from the same noise.
    pub relaxed: Var,
    pub noise: Tensor,
    /// Forward value `hard`, gradient routed through `relaxed`.
    pub output: Var,
}

impl DecisionSample {
    /// Chosen index per row.
    pub fn indices(&self) -> Vec<usize> {
        let k = self.hard.shape()[1];
        self.hard.data().chunks(k).map(|row| row.iter().position(|&v| v == 1.0).unwrap_or(0)).collect()
    }
}

/// Draws Gumbel noise for every row of `log_p: [batch × K]`, takes the hard
/// argmax and the relaxed softmax from that same noise, and joins them with a
/// straight-through node.
pub fn straight_through_decision(
    g: &mut Graph,
    log_p: Var,
    tau: f64,
    rng: &mut Rng,
) -> Result<DecisionSample, GumbelError> {
    let shape = g.shape(log_p).to_vec();
    if shape.len() != 2 {
        return Err(TensorError::Rank { op: "straight_through_decision", expected: 2, shape }.into());
    }
    let (batch, k) = (shape[0], shape[1]);
    let noise: Vec<f64> = (0..batch).flat_map(|_| sample_gumbel(k, rng)).collect();
    let noise = Tensor::new(&shape, noise)?;
    straight_through_with_noise(g, log_p, tau, noise)
}

/// [`straight_through_decision`] with caller-supplied noise.
pub fn straight_through_with_noise(
    g: &mut Graph,
    log_p: Var,
    tau: f64,
    noise: Tensor,
) -> Result<DecisionSample, GumbelError> {
    let relaxed = gumbel_softmax(g, log_p, &noise, tau)?;
    let k = noise.shape()[1];
    let mut hard = vec![0.0; noise.numel()];
    let lp = g.value(log_p).data();
    for (r, (row, nrow)) in lp.chunks(k).zip(noise.data().chunks(k)).enumerate() {
        hard[r * k + gumbel_max(row, nrow)] = 1.0;
    }
    let hard = Tensor::new(noise.shape(), hard)?;
    let output = g.straight_through(hard.clone(), relaxed)?;
    Ok(DecisionSample { hard, relaxed, noise, output })
}

/// Per-epoch exponential temperature decay `τ(e) = τ₀·exp(−decay·e)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub initial: f64,
    pub decay: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self { initial: 5.0, decay: 0.05 }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        self.initial * (-self.decay * epoch as f64).exp()
    }
}

/// Default schedule: `5·exp(−0.05·e)`.
pub fn temperature(epoch: usize) -> f64 {
    TemperatureSchedule::default().at(epoch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn uniform_one_over_e_gives_zero() {
        assert!(gumbel_from_uniform((-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn clamp_keeps_noise_finite() {
        assert!(gumbel_from_uniform(0.0).is_finite());
        assert!(gumbel_from_uniform(1.0).is_finite());
    }

    #[test]
    fn gumbel_mean_is_euler_mascheroni() {
        let mut rng = seeded_rng(11);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sample_gumbel(1, &mut rng)[0]).sum::<f64>() / n as f64;
        assert!((mean - 0.577_215_664_9).abs() < 0.005, "mean {mean}");
    }

    #[test]
    fn same_seed_same_noise() {
        let a = sample_gumbel(50, &mut seeded_rng(3));
        let b = sample_gumbel(50, &mut seeded_rng(3));
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_examples() {
        assert_eq!(gumbel_max(&[0.0, -30.0], &[2.0, 5.0]), 0);
        assert_eq!(gumbel_max(&[0.0, 0.0], &[1.0, 0.0]), 0);
        assert_eq!(gumbel_max(&[0.0, 0.0], &[0.0, 0.0]), 0);
        assert_eq!(gumbel_max(&[0.0, 0.0], &[0.0, 1.0]), 1);
    }

    fn frequency_of_first(p: f64, n: usize, seed: u64) -> f64 {
        let lp = [p.ln(), (1.0 - p).ln()];
        let mut rng = seeded_rng(seed);
        let hits = (0..n).filter(|_| gumbel_max(&lp, &sample_gumbel(2, &mut rng)) == 0).count();
        hits as f64 / n as f64
    }

    #[test]
    fn gumbel_max_matches_categorical() {
        let n = 100_000;
        for (i, p) in [0.1, 0.3, 0.5, 0.7, 0.9].into_iter().enumerate() {
            let f = frequency_of_first(p, n, 100 + i as u64);
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((f - p).abs() < 3.0 * sigma, "p {p}: freq {f}");
        }
    }

    #[test]
    fn dominant_category_nearly_always_wins() {
        let mut rng = seeded_rng(5);
        let n = 100_000;
        let zeros = (0..n).filter(|_| gumbel_max(&[0.0, -30.0], &sample_gumbel(2, &mut rng)) == 0).count();
        assert!(zeros as f64 >= 0.9999 * n as f64);
    }

    fn relaxed_of(log_p: &[f64], noise: &[f64], tau: f64) -> Vec<f64> {
        let mut g = Graph::new();
        let lp = g.constant(Tensor::new(&[1, log_p.len()], log_p.to_vec()).unwrap());
        let noise = Tensor::new(&[1, noise.len()], noise.to_vec()).unwrap();
        let r = gumbel_softmax(&mut g, lp, &noise, tau).unwrap();
        g.value(r).data().to_vec()
    }

    #[test]
    fn softmax_symmetric_for_equal_logits() {
        for tau in [0.01, 1.0, 5.0] {
            let r = relaxed_of(&[0.3, 0.3], &[0.0, 0.0], tau);
            assert_eq!(r, vec![0.5, 0.5]);
        }
    }

    #[test]
    fn low_temperature_is_one_hot() {
        let r = relaxed_of(&[0.7f64.ln(), 0.3f64.ln()], &[0.1, 0.2], 0.01);
        assert!(r[0].max(r[1]) > 1.0 - 1e-3);
    }

    #[test]
    fn high_temperature_is_uniform() {
        let r = relaxed_of(&[0.9f64.ln(), 0.1f64.ln()], &[1.3, -0.4], 1e6);
        assert!(r.iter().all(|v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn non_positive_temperature_rejected() {
        let mut g = Graph::new();
        let lp = g.constant(Tensor::zeros(&[1, 2]));
        for tau in [0.0, -1.0, f64::NAN] {
            assert!(matches!(gumbel_softmax(&mut g, lp, &Tensor::zeros(&[1, 2]), tau), Err(GumbelError::Temperature(_))));
        }
    }

    #[test]
    fn straight_through_shares_noise() {
        let mut rng = seeded_rng(9);
        for _ in 0..200 {
            let mut g = Graph::new();
            let lp = g.param(Tensor::new(&[3, 2], vec![0.2f64.ln(), 0.8f64.ln(), -0.1, -2.4, -1.0, -0.5]).unwrap());
            let lp = g.log_softmax(lp, 1).unwrap();
            let s = straight_through_decision(&mut g, lp, 0.01, &mut rng).unwrap();
            let relaxed = g.value(s.relaxed).clone();
            for r in 0..3 {
                let row = &s.hard.data()[2 * r..2 * r + 2];
                assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
                assert_eq!(row.iter().sum::<f64>(), 1.0);
                let rel = &relaxed.data()[2 * r..2 * r + 2];
                assert!((rel.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(rel.iter().all(|&v| v >= 0.0));
                // Two categories: |relaxed − hard| = 1/(1 + exp(|Δ|/τ)) for the
                // perturbed gap Δ, so the 1e-3 limit needs |Δ| ≥ τ·ln 999.
                let lpv = g.value(lp).data();
                let n = s.noise.data();
                let gap = ((lpv[2 * r] + n[2 * r]) - (lpv[2 * r + 1] + n[2 * r + 1])).abs();
                let diff = (rel[0] - row[0]).abs();
                assert!((diff - 1.0 / (1.0 + (gap / 0.01).exp())).abs() < 1e-12);
                if gap >= 0.01 * 999f64.ln() {
                    assert!(diff < 1e-3, "relaxed {rel:?} hard {row:?}");
                }
            }
            assert_eq!(g.value(s.output), &s.hard);
        }
    }

    #[test]
    fn l1_gap_shrinks_with_temperature() {
        let mut rng = seeded_rng(21);
        for _ in 0..500 {
            let lp = [0.35f64.ln(), 0.65f64.ln()];
            let noise = sample_gumbel(2, &mut rng);
            let k = gumbel_max(&lp, &noise);
            let mut prev = f64::INFINITY;
            for tau in [5.0, 1.0, 0.1, 0.01] {
                let r = relaxed_of(&lp, &noise, tau);
                let gap: f64 = r.iter().enumerate().map(|(i, v)| (v - if i == k { 1.0 } else { 0.0 }).abs()).sum();
                assert!(gap <= prev + 1e-15, "gap grew at τ = {tau}");
                prev = gap;
            }
        }
    }

    #[test]
    fn logits_receive_gradient_through_hard_forward() {
        let mut rng = seeded_rng(4);
        let mut g = Graph::new();
        let logits = g.param(Tensor::new(&[1, 2], vec![0.4, -0.2]).unwrap());
        let lp = g.log_softmax(logits, 1).unwrap();
        let s = straight_through_decision(&mut g, lp, 1.0, &mut rng).unwrap();
        let w = g.constant(Tensor::new(&[1, 2], vec![3.0, -1.0]).unwrap());
        let y = g.mul(s.output, w).unwrap();
        let loss = g.sum(y).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(logits).unwrap().data().iter().any(|v| v.abs() > 1e-6));
    }

    #[test]
    fn schedule_values() {
        assert_eq!(temperature(0), 5.0);
        assert!((temperature(20) - 1.8394).abs() < 1e-4);
        // 5·exp(−3)
        assert!((temperature(60) - 0.248_935_341_8).abs() < 1e-9);
        assert!((temperature(20) - 5.0 / std::f64::consts::E).abs() < 1e-15);
    }
}
