//! Adaptive visual-inertial odometry with a learned gate on the visual encoder.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`]: reverse-mode differentiation over dense arrays.
//! - [`nn`]: layers, parameter storage, Adam, checkpoints.
//! - [`gumbel`]: Gumbel-Max sampling, Gumbel-Softmax relaxation, the
//!   straight-through split and the temperature schedule.
//! - [`geometry`]: SE(3) poses, Euler angles, RMSE and segment errors, KITTI
//!   pose files.
//! - [`simkit`]: synthetic trajectories, IMU and visual-proxy synthesis,
//!   dataset archives.
//! - [`model`]: encoders, policy, fusion, pose LSTM, rollouts, FLOP counts.
//! - [`train`]: losses, the two-stage schedule, evaluation, analysis, reports.

pub mod config;
pub mod geometry;
pub mod gumbel;
pub mod model;
pub mod nn;
pub mod simkit;
pub mod tensor;
pub mod train;

pub type Rng = rand_chacha::ChaCha8Rng;

/// Seeded generator used throughout the crate.
pub fn seeded_rng(seed: u64) -> Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
