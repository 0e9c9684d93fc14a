//! Segment-based relative errors and the KITTI pose text format.
//!
//! A pose file has one line per frame holding the top three rows of the 4×4
//! pose matrix, row-major: `r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz`.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use super::{orthonormality_error, rotation_angle, GeometryError, Pose, Trajectory};

/// Segment lengths in meters.
pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];
/// Frames between consecutive segment starts.
pub const SEGMENT_STRIDE: usize = 10;
/// Parsed rotations further than this from orthonormal are rejected.
pub const MAX_ORTHO_DEVIATION: f64 = 1e-3;
/// Parsed rotations further than this (but within the rejection limit) are
/// projected onto the nearest rotation.
pub const RENORMALIZE_ABOVE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentError {
    pub start_frame: usize,
    pub length_m: f64,
    pub t_err_pct: f64,
    pub r_err_deg_per_100m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KittiErrors {
    /// Mean translational error, percent.
    pub t_rel: f64,
    /// Mean rotational error, degrees per 100 m.
    pub r_rel: f64,
    pub segments: Vec<SegmentError>,
}

/// For every start frame (stride [`SEGMENT_STRIDE`]) and every length `L` in
/// [`SEGMENT_LENGTHS`], the end frame is the first whose ground-truth
/// cumulative distance reaches `start + L`. The error pose is
/// `E = (gt_rel)⁻¹·pred_rel`; its translation norm over `L` gives percent and
/// its rotation angle over `L` gives degrees per 100 m. Means are taken over
/// every valid (start, L) pair.
pub fn kitti_rel_errors(pred: &Trajectory, gt: &Trajectory) -> Result<KittiErrors, GeometryError> {
    if pred.len() != gt.len() {
        return Err(GeometryError::LengthMismatch { pred: pred.len(), gt: gt.len() });
    }
    let dist = gt.distances();
    let (pp, gp) = (pred.poses(), gt.poses());
    let mut segments = Vec::new();
    for start in (0..gp.len()).step_by(SEGMENT_STRIDE) {
        for &len in &SEGMENT_LENGTHS {
            let target = dist[start] + len;
            let Some(end) = (start..gp.len()).find(|&i| dist[i] >= target) else {
                continue;
            };
            let gt_rel = gp[start].relative_to(&gp[end]);
            let pred_rel = pp[start].relative_to(&pp[end]);
            let e = gt_rel.inverse().mul(&pred_rel);
            segments.push(SegmentError {
                start_frame: start,
                length_m: len,
                t_err_pct: e.translation.norm() / len * 100.0,
                r_err_deg_per_100m: rotation_angle(&e.rotation).to_degrees() / len * 100.0,
            });
        }
    }
    if segments.is_empty() {
        return Err(GeometryError::NoSegments);
    }
    let n = segments.len() as f64;
    let t_rel = segments.iter().map(|s| s.t_err_pct).sum::<f64>() / n;
    let r_rel = segments.iter().map(|s| s.r_err_deg_per_100m).sum::<f64>() / n;
    Ok(KittiErrors { t_rel, r_rel, segments })
}

/// CSV with header `start_frame,length_m,t_err_pct,r_err_deg_per_100m`.
pub fn segments_csv(segments: &[SegmentError]) -> String {
    let mut out = String::from("start_frame,length_m,t_err_pct,r_err_deg_per_100m\n");
    for s in segments {
        let _ = writeln!(out, "{},{},{},{}", s.start_frame, s.length_m, s.t_err_pct, s.r_err_deg_per_100m);
    }
    out
}

/// Parses one pose per non-empty line. Rotations off orthonormal by more than
/// [`RENORMALIZE_ABOVE`] are projected to the nearest rotation; beyond
/// [`MAX_ORTHO_DEVIATION`] the line is rejected.
pub fn parse_kitti_poses(text: &str) -> Result<Vec<Pose>, GeometryError> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| GeometryError::Parse { line: line_no, message: format!("invalid number `{tok}`") })
            })
            .collect::<Result<_, _>>()?;
        if vals.len() != 12 {
            return Err(GeometryError::Parse { line: line_no, message: format!("expected 12 values, found {}", vals.len()) });
        }
        let mut rot = Matrix3::new(vals[0], vals[1], vals[2], vals[4], vals[5], vals[6], vals[8], vals[9], vals[10]);
        let deviation = orthonormality_error(&rot);
        if !(deviation <= MAX_ORTHO_DEVIATION) {
            return Err(GeometryError::NotOrthonormal { line: line_no, deviation });
        }
        if deviation > RENORMALIZE_ABOVE {
            rot = nearest_rotation(&rot);
        }
        poses.push(Pose::new(rot, Vector3::new(vals[3], vals[7], vals[11])));
    }
    Ok(poses)
}

/// Writes each pose with 13 significant digits.
pub fn write_kitti_poses(poses: &[Pose]) -> String {
    let mut out = String::new();
    for p in poses {
        let row: Vec<String> = p.to_rows().iter().map(|v| format!("{v:.12e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

/// Polar projection `U·Vᵀ` with a determinant sign fix.
fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let mut r = u * vt;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * vt;
    }
    r
}
