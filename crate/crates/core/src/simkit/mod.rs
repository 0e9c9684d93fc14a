//! Synthetic planar driving with IMU and visual-proxy channels.
//!
//! Motion is generated at the IMU rate from a schedule of segments, each
//! with a target speed and a path curvature. Speed and curvature move to
//! their targets along cubic smoothsteps, so acceleration and yaw rate are
//! continuous. Yaw and position are integrated with the endpoint-averaged
//! (trapezoidal) rule; speed is analytic and its derivative is the
//! acceleration fed to the accelerometer.
//!
//! Frame `t` pairs the IMU window of ticks `[t·l, (t+1)·l]` (11 samples for
//! `l = 10`, endpoints shared with neighbors) with a visual proxy: a fixed
//! random linear image of the true interval motion `(φ, v)` plus Gaussian
//! noise.

mod io;
mod motion;
mod sensors;

pub use io::{export_dataset, load_dataset, DATASET_FORMAT, DATASET_VERSION};
pub use motion::{generate_trajectory, kitti_like_schedule, DenseState};
pub use sensors::{synthesize_imu, synthesize_visual, visual_embedding, ImuWindow, IMU_CHANNELS};

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, Pose, RelPose};
use crate::{seeded_rng, Rng};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("infeasible schedule at t = {time:.2} s: yaw rate {yaw_rate:.4} rad/s exceeds {bound} rad/s")]
    Infeasible { time: f64, yaw_rate: f64, bound: f64 },
    #[error("dataset i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset manifest: {0}")]
    Manifest(String),
    #[error("dataset version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch in {file}")]
    Checksum { file: String },
    #[error("array {file} holds {found} values, expected {expected}")]
    Shape { file: String, expected: usize, found: usize },
}

/// One stretch of the drive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub duration_s: f64,
    /// Target speed, m/s, reached by a smoothstep from the previous target.
    pub speed: f64,
    /// Signed path curvature, 1/m (positive turns left).
    pub curvature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Schedule {
    /// Random urban/highway mix: fast straights, slow turns, occasional stops.
    KittiLike,
    /// Fixed segments; the first one sets the initial speed and curvature.
    Explicit { segments: Vec<Segment> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Gyro white noise, rad/s.
    pub gyro_sigma: f64,
    /// Accelerometer white noise, m/s².
    pub accel_sigma: f64,
    /// Per-sequence gyro bias drawn uniformly in `±gyro_bias`.
    pub gyro_bias: f64,
    pub accel_bias: f64,
    /// Visual-proxy signal-to-noise ratio `mean‖E·x‖ / σ_v`; `None` is noiseless.
    pub visual_snr: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { gyro_sigma: 1e-3, accel_sigma: 1e-2, gyro_bias: 1e-3, accel_bias: 1e-2, visual_snr: Some(10.0) }
    }
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self { gyro_sigma: 0.0, accel_sigma: 0.0, gyro_bias: 0.0, accel_bias: 0.0, visual_snr: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub frame_rate_hz: f64,
    pub imu_rate_hz: f64,
    pub duration_s: f64,
    pub min_speed: f64,
    pub max_speed: f64,
    /// Acceleration bound when speeding up, m/s².
    pub max_accel: f64,
    /// Deceleration bound when slowing down, m/s².
    pub max_decel: f64,
    pub max_yaw_rate: f64,
    pub gravity: f64,
    pub visual_dim: usize,
    pub schedule: Schedule,
    pub noise: NoiseConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            frame_rate_hz: 10.0,
            imu_rate_hz: 100.0,
            duration_s: 60.0,
            min_speed: 0.0,
            max_speed: 15.8,
            max_accel: 2.0,
            max_decel: 3.0,
            max_yaw_rate: 0.7,
            gravity: 9.81,
            visual_dim: 64,
            schedule: Schedule::KittiLike,
            noise: NoiseConfig::default(),
        }
    }
}

impl SimConfig {
    /// IMU ticks per frame interval `l`.
    pub fn ticks_per_frame(&self) -> usize {
        (self.imu_rate_hz / self.frame_rate_hz).round() as usize
    }

    pub fn imu_dt(&self) -> f64 {
        1.0 / self.imu_rate_hz
    }

    /// Number of frames `N`; a sequence has `N − 1` samples.
    pub fn num_frames(&self) -> usize {
        (self.duration_s * self.frame_rate_hz).round() as usize + 1
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if !(self.frame_rate_hz > 0.0 && self.imu_rate_hz > 0.0) {
            return bad("rates must be positive".into());
        }
        let ratio = self.imu_rate_hz / self.frame_rate_hz;
        if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
            return bad(format!("imu rate {} is not an integer multiple of frame rate {}", self.imu_rate_hz, self.frame_rate_hz));
        }
        if self.num_frames() < 2 {
            return bad(format!("duration {} s gives fewer than two frames", self.duration_s));
        }
        if !(self.min_speed >= 0.0 && self.max_speed >= self.min_speed) {
            return bad(format!("speed range [{}, {}] is invalid", self.min_speed, self.max_speed));
        }
        if !(self.max_accel > 0.0 && self.max_decel > 0.0 && self.max_yaw_rate > 0.0) {
            return bad("acceleration and yaw-rate bounds must be positive".into());
        }
        if self.visual_dim == 0 {
            return bad("visual_dim must be positive".into());
        }
        let n = &self.noise;
        let sigmas = [n.gyro_sigma, n.accel_sigma, n.gyro_bias, n.accel_bias];
        if sigmas.iter().any(|s| !(*s >= 0.0)) {
            return bad("noise levels must be non-negative".into());
        }
        if let Some(snr) = n.visual_snr {
            if !(snr > 0.0) {
                return bad(format!("visual_snr {snr} must be positive"));
            }
        }
        if let Schedule::Explicit { segments } = &self.schedule {
            if segments.is_empty() {
                return bad("explicit schedule has no segments".into());
            }
            for (i, s) in segments.iter().enumerate() {
                if !(s.duration_s > 0.0) || !s.curvature.is_finite() {
                    return bad(format!("segment {i}: duration must be positive and curvature finite"));
                }
                if !(s.speed >= self.min_speed && s.speed <= self.max_speed) {
                    return bad(format!("segment {i}: speed {} outside [{}, {}]", s.speed, self.min_speed, self.max_speed));
                }
            }
        }
        Ok(())
    }
}

/// One frame interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub visual: Vec<f64>,
    pub imu: ImuWindow,
    pub gt_rel: RelPose,
    /// Interval chord speed `‖v‖ / Δt`, m/s.
    pub gt_speed: f64,
    /// Interval yaw rate `Δyaw / Δt`, rad/s (signed).
    pub gt_yaw_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: usize,
    pub seed: u64,
    pub initial_pose: Pose,
    pub samples: Vec<Sample>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn gt_rels(&self) -> Vec<RelPose> {
        self.samples.iter().map(|s| s.gt_rel).collect()
    }

    /// Ground-truth poses at frame times.
    pub fn gt_trajectory(&self) -> Result<geometry::Trajectory, geometry::GeometryError> {
        geometry::accumulate(&self.initial_pose, &self.gt_rels())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: SimConfig,
    pub seed: u64,
    /// `[visual_dim × 6]`, maps `[φ; v]` to the proxy.
    pub embedding: Vec<f64>,
    pub visual_sigma: f64,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn num_samples(&self) -> usize {
        self.sequences.iter().map(Sequence::len).sum()
    }

    /// Splits by sequence: the first `round(frac·n)` sequences form the first part.
    pub fn split(&self, frac: f64) -> (Dataset, Dataset) {
        let k = ((self.sequences.len() as f64) * frac).round() as usize;
        let mut a = self.clone();
        let b_seqs = a.sequences.split_off(k.min(a.sequences.len()));
        let b = Dataset { sequences: b_seqs, ..self.clone_meta() };
        (a, b)
    }

    fn clone_meta(&self) -> Dataset {
        Dataset {
            config: self.config.clone(),
            seed: self.seed,
            embedding: self.embedding.clone(),
            visual_sigma: self.visual_sigma,
            sequences: Vec::new(),
        }
    }
}

/// Generates `num_sequences` sequences. Everything is a pure function of
/// `(config, seed)`: the embedding and each sequence draw from their own
/// seeded streams.
pub fn generate_dataset(config: &SimConfig, seed: u64, num_sequences: usize) -> Result<Dataset, SimError> {
    config.validate()?;
    let embedding = visual_embedding(config.visual_dim, &mut seeded_rng(seed ^ 0x5EED_E3BE_D000_0000));
    let mut master = seeded_rng(seed);
    let seq_seeds: Vec<u64> = (0..num_sequences).map(|_| master.random()).collect();
    let mut raw = Vec::with_capacity(num_sequences);
    for &s in &seq_seeds {
        let mut rng = seeded_rng(s);
        let states = generate_trajectory(config, &mut rng)?;
        let imu = synthesize_imu(&states, config, &mut rng);
        raw.push((s, states, imu, rng));
    }
    // σ_v is shared by the whole dataset: mean signal norm over SNR.
    let l = config.ticks_per_frame();
    let rels: Vec<Vec<RelPose>> = raw.iter().map(|(_, states, _, _)| interval_rels(states, l)).collect();
    let visual_sigma = match config.noise.visual_snr {
        Some(snr) => mean_signal_norm(&embedding, rels.iter().flatten()) / snr,
        None => 0.0,
    };
    let dt = 1.0 / config.frame_rate_hz;
    let mut sequences = Vec::with_capacity(num_sequences);
    for (id, ((s, states, imu, mut rng), rels)) in raw.into_iter().zip(rels).enumerate() {
        let visual = synthesize_visual(&rels, &embedding, visual_sigma, &mut rng);
        let samples = rels
            .iter()
            .zip(imu)
            .zip(visual)
            .map(|((r, imu), visual)| Sample { visual, imu, gt_rel: *r, gt_speed: r.v.norm() / dt, gt_yaw_rate: r.phi.z / dt })
            .collect();
        sequences.push(Sequence { id, seed: s, initial_pose: states[0].pose(), samples });
    }
    Ok(Dataset { config: config.clone(), seed, embedding, visual_sigma, sequences })
}

/// Relative pose over every frame interval of a dense state stream.
pub fn interval_rels(states: &[DenseState], ticks_per_frame: usize) -> Vec<RelPose> {
    let frames: Vec<Pose> = states.iter().step_by(ticks_per_frame).map(DenseState::pose).collect();
    frames.windows(2).map(|w| geometry::relative(&w[0], &w[1]).expect("planar motion has zero pitch")).collect()
}

fn mean_signal_norm<'a>(embedding: &[f64], rels: impl Iterator<Item = &'a RelPose>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in rels {
        sum += sensors::embed(embedding, r).iter().map(|v| v * v).sum::<f64>().sqrt();
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub(crate) fn uniform_sym(rng: &mut Rng, bound: f64) -> f64 {
    if bound > 0.0 {
        rng.random_range(-bound..=bound)
    } else {
        0.0
    }
}
