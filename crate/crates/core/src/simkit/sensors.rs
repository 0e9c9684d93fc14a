use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{uniform_sym, DenseState, SimConfig};
use crate::geometry::RelPose;
use crate::Rng;

/// Rows of an IMU window: gyro x, y, z (rad/s), then accel x, y, z (m/s²).
pub const IMU_CHANNELS: usize = 6;

/// `[6 × (l+1)]` row-major measurements for one frame interval.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuWindow {
    pub len: usize,
    pub data: Vec<f64>,
}

impl ImuWindow {
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.len..(c + 1) * self.len]
    }

    pub fn at(&self, c: usize, j: usize) -> f64 {
        self.data[c * self.len + j]
    }
}

/// Measures every tick once, then cuts windows of `l + 1` samples that share
/// their endpoints with the neighbors.
///
/// Gyro: body angular velocity + bias + noise. Accel: specific force
/// `a_body − Rᵀ·g` with `g = (0, 0, −gravity)`, i.e. `(u̇, u·ω, +gravity)` for
/// planar motion, + bias + noise. Biases are drawn once per call.
pub fn synthesize_imu(states: &[DenseState], config: &SimConfig, rng: &mut Rng) -> Vec<ImuWindow> {
    let n = &config.noise;
    let gyro_bias = [0; 3].map(|_| uniform_sym(rng, n.gyro_bias));
    let accel_bias = [0; 3].map(|_| uniform_sym(rng, n.accel_bias));
    let mut noise = |sigma: f64| {
        if sigma > 0.0 {
            let z: f64 = StandardNormal.sample(rng);
            sigma * z
        } else {
            0.0
        }
    };
    let ticks: Vec<[f64; IMU_CHANNELS]> = states
        .iter()
        .map(|s| {
            let w = s.angular_velocity();
            let f = s.body_acceleration() + nalgebra::Vector3::new(0.0, 0.0, config.gravity);
            let mut m = [0.0; IMU_CHANNELS];
            for i in 0..3 {
                m[i] = w[i] + gyro_bias[i] + noise(n.gyro_sigma);
                m[3 + i] = f[i] + accel_bias[i] + noise(n.accel_sigma);
            }
            m
        })
        .collect();
    let l = config.ticks_per_frame();
    let frames = (states.len() - 1) / l;
    (0..frames)
        .map(|t| {
            let mut data = vec![0.0; IMU_CHANNELS * (l + 1)];
            for j in 0..=l {
                for c in 0..IMU_CHANNELS {
                    data[c * (l + 1) + j] = ticks[t * l + j][c];
                }
            }
            ImuWindow { len: l + 1, data }
        })
        .collect()
}

/// Random `[dim × 6]` embedding with entries `N(0, 1/dim)`, so `‖E·x‖ ≈ ‖x‖`.
pub fn visual_embedding(dim: usize, rng: &mut Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("finite std");
    (0..dim * 6).map(|_| normal.sample(rng)).collect()
}

pub(crate) fn embed(embedding: &[f64], rel: &RelPose) -> Vec<f64> {
    let x = rel.to_array();
    embedding.chunks(6).map(|row| row.iter().zip(&x).map(|(a, b)| a * b).sum()).collect()
}

/// `E·[φ; v] + N(0, σ²)` per interval.
pub fn synthesize_visual(rels: &[RelPose], embedding: &[f64], sigma: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    rels.iter()
        .map(|r| {
            let mut y = embed(embedding, r);
            if sigma > 0.0 {
                for v in &mut y {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += sigma * z;
                }
            }
            y
        })
        .collect()
}
