use std::f64::consts::{FRAC_PI_2, FRAC_PI_6};

use nalgebra::{Matrix3, Vector3};
use rand::Rng as _;

use super::{Schedule, Segment, SimConfig, SimError};
use crate::geometry::Pose;
use crate::Rng;

/// Curvature transitions take this long (or the whole segment if shorter).
const CURVATURE_RAMP_S: f64 = 1.0;

/// Vehicle state at one IMU tick. The body frame is x forward, y left, z up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenseState {
    pub time: f64,
    pub position: Vector3<f64>,
    pub yaw: f64,
    /// Forward speed, m/s.
    pub speed: f64,
    /// Forward acceleration `d speed / dt`, m/s².
    pub accel: f64,
    pub yaw_rate: f64,
}

impl DenseState {
    pub fn pose(&self) -> Pose {
        let (s, c) = self.yaw.sin_cos();
        Pose::new(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0), self.position)
    }

    /// World-frame velocity.
    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.yaw.cos(), self.yaw.sin(), 0.0) * self.speed
    }

    /// Body-frame kinematic acceleration: forward `u̇`, centripetal `u·ω`.
    pub fn body_acceleration(&self) -> Vector3<f64> {
        Vector3::new(self.accel, self.speed * self.yaw_rate, 0.0)
    }

    pub fn angular_velocity(&self) -> Vector3<f64> {
        Vector3::new(0.0, 0.0, self.yaw_rate)
    }
}

/// `3τ² − 2τ³` and its derivative; peak slope 1.5.
fn smoothstep(tau: f64) -> (f64, f64) {
    let t = tau.clamp(0.0, 1.0);
    (t * t * (3.0 - 2.0 * t), 6.0 * t * (1.0 - t))
}

/// Value and time-derivative of a smoothstep transition from `from` to `to`
/// that starts at 0 and lasts `span`.
fn ramp(from: f64, to: f64, elapsed: f64, span: f64) -> (f64, f64) {
    if span <= 0.0 || elapsed >= span {
        return (to, 0.0);
    }
    let (s, ds) = smoothstep(elapsed / span);
    (from + (to - from) * s, (to - from) * ds / span)
}

struct Plan {
    starts: Vec<f64>,
    segments: Vec<Segment>,
    speed_spans: Vec<f64>,
}

impl Plan {
    fn new(segments: Vec<Segment>, config: &SimConfig) -> Result<Self, SimError> {
        let mut starts = Vec::with_capacity(segments.len());
        let mut speed_spans = Vec::with_capacity(segments.len());
        let mut t = 0.0;
        for (i, s) in segments.iter().enumerate() {
            let prev = if i == 0 { s.speed } else { segments[i - 1].speed };
            let bound = if s.speed >= prev { config.max_accel } else { config.max_decel };
            let span = 1.5 * (s.speed - prev).abs() / bound;
            if span > s.duration_s + 1e-12 {
                return Err(SimError::Config(format!(
                    "segment {i}: speed change {prev} → {} needs {span:.2} s but lasts {} s",
                    s.speed, s.duration_s
                )));
            }
            starts.push(t);
            speed_spans.push(span);
            t += s.duration_s;
        }
        Ok(Self { starts, segments, speed_spans })
    }

    /// (speed, accel, curvature) at time `t`.
    fn controls(&self, t: f64) -> (f64, f64, f64) {
        let i = self.starts.partition_point(|&s| s <= t).saturating_sub(1);
        let seg = &self.segments[i];
        let prev = if i == 0 { seg } else { &self.segments[i - 1] };
        let elapsed = t - self.starts[i];
        let (u, a) = ramp(prev.speed, seg.speed, elapsed, self.speed_spans[i]);
        let (k, _) = ramp(prev.curvature, seg.curvature, elapsed, CURVATURE_RAMP_S.min(seg.duration_s));
        (u, a, k)
    }
}

/// Dense states at the IMU rate covering `num_frames` frames, starting at
/// the origin with zero yaw.
///
/// Yaw and position follow the trapezoidal rule
/// `x_{k+1} = x_k + Δt·(ẋ_k + ẋ_{k+1})/2` on the yaw rate and the world
/// velocity; the strapdown integrator in the tests uses the same rule.
pub fn generate_trajectory(config: &SimConfig, rng: &mut Rng) -> Result<Vec<DenseState>, SimError> {
    config.validate()?;
    let segments = match &config.schedule {
        Schedule::Explicit { segments } => segments.clone(),
        Schedule::KittiLike => kitti_like_schedule(config, rng),
    };
    let plan = Plan::new(segments, config)?;
    let dt = config.imu_dt();
    let ticks = (config.num_frames() - 1) * config.ticks_per_frame() + 1;
    let mut states = Vec::with_capacity(ticks);
    for k in 0..ticks {
        let time = k as f64 * dt;
        let (speed, accel, curvature) = plan.controls(time);
        let yaw_rate = curvature * speed;
        if yaw_rate.abs() > config.max_yaw_rate * (1.0 + 1e-9) {
            return Err(SimError::Infeasible { time, yaw_rate, bound: config.max_yaw_rate });
        }
        let mut s = DenseState { time, position: Vector3::zeros(), yaw: 0.0, speed, accel, yaw_rate };
        if let Some(p) = states.last() {
            let p: &DenseState = p;
            s.yaw = p.yaw + 0.5 * dt * (p.yaw_rate + yaw_rate);
            s.position = p.position + 0.5 * dt * (p.velocity() + s.velocity());
        }
        states.push(s);
    }
    Ok(states)
}

/// Random schedule with urban and highway stretches: cruises at
/// `[6, max_speed]`, gentle curves, turns taken at `[2, 7]` m/s with yaw rates
/// up to 0.68 rad/s, and stops. Turns are entered only after braking to the
/// turn speed, so yaw rate stays within bounds.
pub fn kitti_like_schedule(config: &SimConfig, rng: &mut Rng) -> Vec<Segment> {
    let span = |from: f64, to: f64| {
        let bound = if to >= from { config.max_accel } else { config.max_decel };
        1.5 * (to - from).abs() / bound
    };
    let cruise_lo = 6.0_f64.clamp(config.min_speed, config.max_speed);
    let turn_hi = 7.0_f64.clamp(config.min_speed, config.max_speed);
    let turn_lo = 2.0_f64.clamp(config.min_speed, turn_hi);
    let max_turn = 0.68_f64.min(0.97 * config.max_yaw_rate);
    let mut u = rng.random_range(cruise_lo..=config.max_speed);
    let mut segs = vec![Segment { duration_s: rng.random_range(2.0..5.0), speed: u, curvature: 0.0 }];
    let mut total = segs[0].duration_s;
    let mut curved = false;
    while total < config.duration_s + 1.0 {
        let event: f64 = rng.random();
        let mut push = |s: Segment, segs: &mut Vec<Segment>| {
            total += s.duration_s;
            segs.push(s);
        };
        if event < 0.35 {
            let target = rng.random_range(cruise_lo..=config.max_speed);
            let d = span(u, target) + rng.random_range(3.0..8.0);
            push(Segment { duration_s: d, speed: target, curvature: 0.0 }, &mut segs);
            u = target;
            curved = false;
        } else if event < 0.7 {
            let v = rng.random_range(turn_lo..=turn_hi);
            push(Segment { duration_s: span(u, v) + 0.5, speed: v, curvature: 0.0 }, &mut segs);
            let w = rng.random_range(0.1..=max_turn);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let angle = rng.random_range(FRAC_PI_6..=FRAC_PI_2);
            let d = (angle / w).clamp(2.0, 10.0);
            push(Segment { duration_s: d, speed: v, curvature: sign * w / v.max(1e-6) }, &mut segs);
            push(Segment { duration_s: 1.5, speed: v, curvature: 0.0 }, &mut segs);
            u = v;
            curved = false;
        } else if event < 0.85 && !curved {
            let target = rng.random_range(cruise_lo..=config.max_speed);
            let w = rng.random_range(0.0..0.1f64.min(max_turn));
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let d = span(u, target) + rng.random_range(3.0..8.0);
            push(Segment { duration_s: d, speed: target, curvature: sign * w / target.max(u).max(1e-6) }, &mut segs);
            u = target;
            curved = true;
        } else {
            let stop = config.min_speed;
            push(Segment { duration_s: span(u, stop) + 0.5, speed: stop, curvature: 0.0 }, &mut segs);
            push(Segment { duration_s: rng.random_range(2.0..4.0), speed: stop, curvature: 0.0 }, &mut segs);
            u = stop;
            curved = false;
        }
    }
    segs
}
