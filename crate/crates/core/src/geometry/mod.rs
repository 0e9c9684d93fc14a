//! Rigid-body poses, Euler angles, trajectory accumulation and trajectory
//! metrics.
//!
//! Euler convention: `φ = (roll, pitch, yaw)` with
//! `R = Rz(yaw)·Ry(pitch)·Rx(roll)` (intrinsic Z-Y-X). A relative pose maps
//! frame `t+1` into frame `t`: `P_{t+1} = P_t·T_{t→t+1}`.

mod kitti;

pub use kitti::{
    kitti_rel_errors, parse_kitti_poses, segments_csv, write_kitti_poses, KittiErrors, SegmentError, SEGMENT_LENGTHS,
    SEGMENT_STRIDE,
};

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Minimum distance of |pitch| from π/2 for a unique Euler recovery.
pub const GIMBAL_MARGIN: f64 = 1e-6;
/// Frame period of trajectories built by [`accumulate`], seconds.
pub const FRAME_PERIOD: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate orientation: pitch {pitch} is within {GIMBAL_MARGIN} of ±π/2")]
    Gimbal { pitch: f64 },
    #[error("length mismatch: {pred} predictions vs {gt} ground truth")]
    LengthMismatch { pred: usize, gt: usize },
    #[error("trajectory needs at least {min} poses, got {got}")]
    TooShort { min: usize, got: usize },
    #[error("timestamps must be strictly increasing (index {index})")]
    Timestamps { index: usize },
    #[error("no valid segments: ground-truth path is shorter than the shortest segment")]
    NoSegments,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: rotation is not orthonormal (deviation {deviation:.3e})")]
    NotOrthonormal { line: usize, deviation: f64 },
}

/// Relative motion between consecutive frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelPose {
    /// Euler angles `(roll, pitch, yaw)`, radians.
    pub phi: Vector3<f64>,
    /// Translation, meters, in the earlier frame.
    pub v: Vector3<f64>,
}

impl RelPose {
    pub fn new(phi: [f64; 3], v: [f64; 3]) -> Self {
        Self { phi: Vector3::from(phi), v: Vector3::from(v) }
    }

    pub fn identity() -> Self {
        Self { phi: Vector3::zeros(), v: Vector3::zeros() }
    }

    /// `[φ; v]` as six numbers, the regression target order.
    pub fn to_array(&self) -> [f64; 6] {
        [self.phi.x, self.phi.y, self.phi.z, self.v.x, self.v.y, self.v.z]
    }

    pub fn from_slice(x: &[f64]) -> Self {
        Self::new([x[0], x[1], x[2]], [x[3], x[4], x[5]])
    }

    pub fn to_pose(&self) -> Pose {
        Pose { rotation: euler_to_rot(&self.phi), translation: self.v }
    }

    pub fn from_pose(p: &Pose) -> Result<Self, GeometryError> {
        Ok(Self { phi: rot_to_euler(&p.rotation)?, v: p.translation })
    }
}

/// Element of SE(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    /// `self · other` as 4×4 homogeneous matrices.
    pub fn mul(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.translation + self.rotation * other.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self⁻¹ · other`.
    pub fn relative_to(&self, other: &Pose) -> Pose {
        self.inverse().mul(other)
    }

    /// `max |RᵀR − I|` over entries, combined with `|det R − 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.rotation)
    }

    pub fn to_rows(&self) -> [f64; 12] {
        let r = &self.rotation;
        let t = &self.translation;
        [r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x, r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y, r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z]
    }
}

pub(crate) fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let gram = (r.transpose() * r - Matrix3::identity()).abs().max();
    gram.max((r.determinant() - 1.0).abs())
}

/// `R = Rz(yaw)·Ry(pitch)·Rx(roll)` for `φ = (roll, pitch, yaw)`.
pub fn euler_to_rot(phi: &Vector3<f64>) -> Matrix3<f64> {
    let (sr, cr) = phi.x.sin_cos();
    let (sp, cp) = phi.y.sin_cos();
    let (sy, cy) = phi.z.sin_cos();
    Matrix3::new(
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        sy * cp,
        sy * sp * sr + cy * cr,
        sy * sp * cr - cy * sr,
        -sp,
        cp * sr,
        cp * cr,
    )
}

/// Inverse of [`euler_to_rot`] with pitch in `(−π/2, π/2)`.
pub fn rot_to_euler(r: &Matrix3<f64>) -> Result<Vector3<f64>, GeometryError> {
    let cp = r[(0, 0)].hypot(r[(1, 0)]);
    let pitch = (-r[(2, 0)]).atan2(cp);
    if std::f64::consts::FRAC_PI_2 - pitch.abs() <= GIMBAL_MARGIN {
        return Err(GeometryError::Gimbal { pitch });
    }
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    let yaw = r[(1, 0)].atan2(r[(0, 0)]);
    Ok(Vector3::new(roll, pitch, yaw))
}

/// Rotation angle of `r` in `[0, π]`, from `atan2(|axis part|, (tr − 1)/2)`.
/// Accurate for small angles, unlike `acos`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let s = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm() / 2.0;
    let c = (r.trace() - 1.0) / 2.0;
    s.atan2(c)
}

/// `P′ = P·T`: `R′ = R·R_T`, `t′ = t + R·v_T`.
pub fn compose(p: &Pose, t: &RelPose) -> Pose {
    p.mul(&t.to_pose())
}

/// Relative motion from `a` to `b`, `a⁻¹·b`, as Euler angles + translation.
pub fn relative(a: &Pose, b: &Pose) -> Result<RelPose, GeometryError> {
    RelPose::from_pose(&a.relative_to(b))
}

/// Poses with timestamps; timestamps strictly increase.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    poses: Vec<Pose>,
    timestamps: Vec<f64>,
}

impl Trajectory {
    pub fn new(poses: Vec<Pose>, timestamps: Vec<f64>) -> Result<Self, GeometryError> {
        if poses.len() != timestamps.len() {
            return Err(GeometryError::LengthMismatch { pred: poses.len(), gt: timestamps.len() });
        }
        if poses.len() < 2 {
            return Err(GeometryError::TooShort { min: 2, got: poses.len() });
        }
        if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(GeometryError::Timestamps { index: i + 1 });
        }
        Ok(Self { poses, timestamps })
    }

    /// Timestamps `i·FRAME_PERIOD`.
    pub fn at_frame_rate(poses: Vec<Pose>) -> Result<Self, GeometryError> {
        let ts = (0..poses.len()).map(|i| i as f64 * FRAME_PERIOD).collect();
        Self::new(poses, ts)
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    /// Consecutive relative poses, `N − 1` of them.
    pub fn relatives(&self) -> Result<Vec<RelPose>, GeometryError> {
        self.poses.windows(2).map(|w| relative(&w[0], &w[1])).collect()
    }

    /// Cumulative path length at each frame, starting at 0.
    pub fn distances(&self) -> Vec<f64> {
        let mut d = Vec::with_capacity(self.poses.len());
        let mut acc = 0.0;
        d.push(0.0);
        for w in self.poses.windows(2) {
            acc += (w[1].translation - w[0].translation).norm();
            d.push(acc);
        }
        d
    }

    /// Applies `g·P` to every pose.
    pub fn transformed(&self, g: &Pose) -> Self {
        Self { poses: self.poses.iter().map(|p| g.mul(p)).collect(), timestamps: self.timestamps.clone() }
    }
}

/// Left fold of [`compose`] from `p1`: `N − 1` relative poses give `N` poses
/// at the default frame rate.
pub fn accumulate(p1: &Pose, rels: &[RelPose]) -> Result<Trajectory, GeometryError> {
    Trajectory::at_frame_rate(accumulate_poses(p1, rels))
}

pub fn accumulate_poses(p1: &Pose, rels: &[RelPose]) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(rels.len() + 1);
    poses.push(*p1);
    let mut cur = *p1;
    for r in rels {
        cur = compose(&cur, r);
        poses.push(cur);
    }
    poses
}

/// Translational and rotational RMSE over relative poses,
/// `√(Σ‖v̂ − v‖² / (3n))` and the same for `φ`.
pub fn rmse(pred: &[RelPose], gt: &[RelPose]) -> Result<(f64, f64), GeometryError> {
    if pred.len() != gt.len() {
        return Err(GeometryError::LengthMismatch { pred: pred.len(), gt: gt.len() });
    }
    if pred.is_empty() {
        return Err(GeometryError::TooShort { min: 1, got: 0 });
    }
    let n = 3.0 * pred.len() as f64;
    let (mut st, mut sr) = (0.0, 0.0);
    for (p, g) in pred.iter().zip(gt) {
        st += (p.v - g.v).norm_squared();
        sr += (p.phi - g.phi).norm_squared();
    }
    Ok(((st / n).sqrt(), (sr / n).sqrt()))
}

#[cfg(test)]
mod tests;
