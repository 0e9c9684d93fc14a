use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;
use rand::Rng as _;

use super::*;
use crate::seeded_rng;

fn random_rel(rng: &mut crate::Rng, ang: f64, trans: f64) -> RelPose {
    RelPose::new(
        [rng.random_range(-ang..ang), rng.random_range(-ang..ang), rng.random_range(-ang..ang)],
        [rng.random_range(-trans..trans), rng.random_range(-trans..trans), rng.random_range(-trans..trans)],
    )
}

fn pose_close(a: &Pose, b: &Pose, tol: f64) -> bool {
    (a.rotation - b.rotation).abs().max() < tol && (a.translation - b.translation).abs().max() < tol
}

#[test]
fn zero_euler_is_identity() {
    assert_eq!(euler_to_rot(&Vector3::zeros()), Matrix3::identity());
}

#[test]
fn yaw_quarter_turn_maps_x_to_y() {
    let r = euler_to_rot(&Vector3::new(0.0, 0.0, FRAC_PI_2));
    let y = r * Vector3::x();
    assert!((y - Vector3::y()).norm() < 1e-15);
}

#[test]
fn euler_matches_elementary_product() {
    let rx = |a: f64| Matrix3::new(1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos());
    let ry = |a: f64| Matrix3::new(a.cos(), 0.0, a.sin(), 0.0, 1.0, 0.0, -a.sin(), 0.0, a.cos());
    let rz = |a: f64| Matrix3::new(a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0);
    let phi = Vector3::new(0.3, -0.7, 2.1);
    let expected = rz(phi.z) * ry(phi.y) * rx(phi.x);
    assert!((euler_to_rot(&phi) - expected).abs().max() < 1e-15);
}

#[test]
fn euler_round_trip() {
    let mut rng = seeded_rng(1);
    for _ in 0..10_000 {
        let phi = Vector3::new(rng.random_range(-PI + 1e-9..PI), rng.random_range(-1.4..1.4), rng.random_range(-PI + 1e-9..PI));
        let r = euler_to_rot(&phi);
        assert!(orthonormality_error(&r) < 1e-12);
        let back = rot_to_euler(&r).unwrap();
        assert!((back - phi).abs().max() < 1e-10, "{phi:?} -> {back:?}");
    }
}

#[test]
fn gimbal_lock_is_reported() {
    let r = euler_to_rot(&Vector3::new(0.1, FRAC_PI_2, 0.2));
    assert!(matches!(rot_to_euler(&r), Err(GeometryError::Gimbal { .. })));
    let r = euler_to_rot(&Vector3::new(0.1, -FRAC_PI_2 + 1e-8, 0.2));
    assert!(matches!(rot_to_euler(&r), Err(GeometryError::Gimbal { .. })));
}

#[test]
fn compose_identity_gives_relative_pose() {
    let t = RelPose::new([0.1, -0.2, 0.3], [1.0, 2.0, 3.0]);
    assert_eq!(compose(&Pose::identity(), &t), t.to_pose());
}

#[test]
fn compose_then_relative_recovers_step() {
    let mut rng = seeded_rng(2);
    for _ in 0..1000 {
        let p = random_rel(&mut rng, 1.2, 50.0).to_pose();
        let t = random_rel(&mut rng, 1.2, 5.0);
        let back = relative(&p, &compose(&p, &t)).unwrap();
        assert!((back.phi - t.phi).abs().max() < 1e-12);
        assert!((back.v - t.v).abs().max() < 1e-12);
    }
}

#[test]
fn pure_translation_chain() {
    let rels = vec![RelPose::new([0.0; 3], [1.0, 0.0, 0.0]); 7];
    let traj = accumulate(&Pose::identity(), &rels).unwrap();
    assert_eq!(traj.len(), 8);
    assert_eq!(traj.poses()[7].translation, Vector3::new(7.0, 0.0, 0.0));
}

#[test]
fn identity_steps_keep_pose() {
    let p = RelPose::new([0.2, 0.1, -1.0], [4.0, 5.0, 6.0]).to_pose();
    let traj = accumulate(&p, &[RelPose::identity(); 5]).unwrap();
    assert!(traj.poses().iter().all(|q| *q == p));
    assert_eq!(traj.timestamps()[3], 0.30000000000000004);
}

#[test]
fn trajectory_validation() {
    assert!(matches!(Trajectory::at_frame_rate(vec![Pose::identity()]), Err(GeometryError::TooShort { .. })));
    let err = Trajectory::new(vec![Pose::identity(); 3], vec![0.0, 0.1, 0.1]).unwrap_err();
    assert_eq!(err, GeometryError::Timestamps { index: 2 });
}

#[test]
fn rmse_examples() {
    let gt = vec![RelPose::new([0.1, 0.2, 0.3], [1.0, 2.0, 3.0])];
    assert_eq!(rmse(&gt, &gt).unwrap(), (0.0, 0.0));
    let pred = vec![RelPose::new([0.1, 0.2, 0.3], [2.0, 3.0, 4.0])];
    let (t, r) = rmse(&pred, &gt).unwrap();
    assert!((t - 1.0).abs() < 1e-15);
    assert_eq!(r, 0.0);
    assert!(matches!(rmse(&pred, &[]), Err(GeometryError::LengthMismatch { .. })));
}

#[test]
fn rmse_constant_offset() {
    let mut rng = seeded_rng(3);
    let eps = 0.037;
    let gt: Vec<RelPose> = (0..50).map(|_| random_rel(&mut rng, 0.5, 2.0)).collect();
    let pred: Vec<RelPose> = gt.iter().map(|g| RelPose { phi: g.phi, v: g.v.add_scalar(eps) }).collect();
    let (t, r) = rmse(&pred, &gt).unwrap();
    assert!((t - eps).abs() < 1e-12);
    assert_eq!(r, 0.0);
}

fn straight_path(n: usize, step: f64) -> Trajectory {
    accumulate(&Pose::identity(), &vec![RelPose::new([0.0; 3], [step, 0.0, 0.0]); n - 1]).unwrap()
}

#[test]
fn kitti_perfect_prediction() {
    let gt = straight_path(500, 2.0);
    let e = kitti_rel_errors(&gt, &gt).unwrap();
    assert_eq!((e.t_rel, e.r_rel), (0.0, 0.0));
    assert!(!e.segments.is_empty());
}

#[test]
fn kitti_requires_long_enough_path() {
    let gt = straight_path(40, 2.0);
    assert_eq!(kitti_rel_errors(&gt, &gt), Err(GeometryError::NoSegments));
}

#[test]
fn kitti_scale_error_oracle() {
    // 1.3 m per frame: segment ends overshoot L by at most one frame, so the
    // measured error is 5%·(L + overshoot)/L ≤ 5.065%.
    let step = 1.3;
    let gt = straight_path(1200, step);
    let pred = straight_path(1200, 0.95 * step);
    let e = kitti_rel_errors(&pred, &gt).unwrap();
    assert!((e.t_rel - 5.0).abs() < 0.1, "t_rel {}", e.t_rel);
    assert!(e.r_rel.abs() < 1e-12);
}

#[test]
fn kitti_yaw_bias_oracle() {
    let speed = 10.0;
    let bias = 0.002;
    let n = 1000;
    let gt = straight_path(n, speed * FRAME_PERIOD);
    let rels = vec![RelPose::new([0.0, 0.0, bias * FRAME_PERIOD], [speed * FRAME_PERIOD, 0.0, 0.0]); n - 1];
    let pred = accumulate(&Pose::identity(), &rels).unwrap();
    let e = kitti_rel_errors(&pred, &gt).unwrap();
    let expected = (bias * 100.0 / speed).to_degrees();
    assert!(((e.r_rel - expected) / expected).abs() < 0.02, "r_rel {} vs {expected}", e.r_rel);
}

fn random_walk(rng: &mut crate::Rng, n: usize) -> Trajectory {
    let rels: Vec<RelPose> = (0..n - 1)
        .map(|_| RelPose::new([0.0, 0.0, rng.random_range(-0.05..0.05)], [rng.random_range(1.0..3.0), rng.random_range(-0.1..0.1), 0.0]))
        .collect();
    accumulate(&Pose::identity(), &rels).unwrap()
}

#[test]
fn kitti_invariant_to_global_rigid_transform() {
    let mut rng = seeded_rng(4);
    for _ in 0..5 {
        let gt = random_walk(&mut rng, 600);
        let noisy: Vec<RelPose> = gt
            .relatives()
            .unwrap()
            .iter()
            .map(|r| RelPose { phi: r.phi.add_scalar(rng.random_range(-1e-3..1e-3)), v: r.v * rng.random_range(0.95..1.05) })
            .collect();
        let pred = accumulate(&Pose::identity(), &noisy).unwrap();
        let g = random_rel(&mut rng, 1.2, 100.0).to_pose();
        let a = kitti_rel_errors(&pred, &gt).unwrap();
        let b = kitti_rel_errors(&pred.transformed(&g), &gt.transformed(&g)).unwrap();
        assert_eq!(a.segments.len(), b.segments.len());
        assert!((a.t_rel - b.t_rel).abs() < 1e-9);
        assert!((a.r_rel - b.r_rel).abs() < 1e-9);
    }
}

#[test]
fn segment_end_is_first_frame_reaching_length() {
    // 25 m per frame: 100 m is reached exactly at frame 4.
    let gt = straight_path(40, 25.0);
    let e = kitti_rel_errors(&gt, &gt).unwrap();
    let first = e.segments.iter().filter(|s| s.start_frame == 0).count();
    assert_eq!(first, 8);
    // Start 10 has 29 frames ahead (725 m).
    assert_eq!(e.segments.iter().filter(|s| s.start_frame == 10).count(), 7);
    // Start 20 has 19 frames ahead (475 m), so lengths up to 400 m.
    assert_eq!(e.segments.iter().filter(|s| s.start_frame == 20).count(), 4);
}

#[test]
fn segments_csv_header_and_rows() {
    let csv = segments_csv(&[SegmentError { start_frame: 10, length_m: 200.0, t_err_pct: 1.5, r_err_deg_per_100m: 0.25 }]);
    assert_eq!(csv, "start_frame,length_m,t_err_pct,r_err_deg_per_100m\n10,200,1.5,0.25\n");
}

#[test]
fn parse_identity_line() {
    let poses = parse_kitti_poses("1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
    assert_eq!(poses, vec![Pose::identity()]);
}

#[test]
fn kitti_file_round_trip() {
    let mut rng = seeded_rng(5);
    let traj = random_walk(&mut rng, 50);
    let poses: Vec<Pose> = traj.poses().iter().map(|p| random_rel(&mut rng, 3.0, 1.0).to_pose().mul(p)).collect();
    let text = write_kitti_poses(&poses);
    let parsed = parse_kitti_poses(&text).unwrap();
    for (a, b) in poses.iter().zip(&parsed) {
        for (x, y) in a.to_rows().iter().zip(b.to_rows()) {
            assert!((x - y).abs() <= 1e-9 * x.abs().max(1e-300), "{x} vs {y}");
        }
    }
    assert_eq!(write_kitti_poses(&parsed), text);
    assert_eq!(parse_kitti_poses(&write_kitti_poses(&parsed)).unwrap(), parsed);
}

#[test]
fn parse_rejects_non_orthonormal_with_line() {
    let text = "1 0 0 0 0 1 0 0 0 0 1 0\n1.01 0 0 0 0 1 0 0 0 0 1 0\n";
    assert!(matches!(parse_kitti_poses(text), Err(GeometryError::NotOrthonormal { line: 2, .. })));
}

#[test]
fn parse_renormalizes_small_deviation() {
    let text = "1.00001 0 0 5 0 1 0 6 0 0 0.99999 7\n";
    let p = parse_kitti_poses(text).unwrap()[0];
    assert!(p.orthonormality_error() < 1e-12);
    assert!(pose_close(&p, &Pose::new(Matrix3::identity(), Vector3::new(5.0, 6.0, 7.0)), 1e-12));
}

#[test]
fn parse_reports_malformed_lines() {
    let err = parse_kitti_poses("1 0 0 0 0 1 0 0 0 0 1 0\n\n1 0 0 0 0 1 0 0 0 0 1\n").unwrap_err();
    assert!(matches!(err, GeometryError::Parse { line: 3, .. }));
    let err = parse_kitti_poses("1 0 0 x 0 1 0 0 0 0 1 0\n").unwrap_err();
    assert!(matches!(err, GeometryError::Parse { line: 1, .. }));
    let err = parse_kitti_poses("1 0 0 nan 0 1 0 0 0 0 1 0\n").unwrap_err();
    assert!(matches!(err, GeometryError::Parse { line: 1, .. }));
}

#[test]
fn rotation_angle_small_and_large() {
    for a in [1e-9, 1e-4, 0.5, 3.0] {
        let r = euler_to_rot(&Vector3::new(0.0, 0.0, a));
        assert!((rotation_angle(&r) - a).abs() < 1e-15 * a.max(1.0) * 10.0);
    }
}

fn arb_rel() -> impl Strategy<Value = RelPose> {
    (-3.0..3.0f64, -1.4..1.4f64, -3.0..3.0f64, -10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64)
        .prop_map(|(r, p, y, a, b, c)| RelPose::new([r, p, y], [a, b, c]))
}

proptest! {
    #[test]
    fn compose_is_associative(a in arb_rel(), b in arb_rel(), c in arb_rel()) {
        let (a, b, c) = (a.to_pose(), b.to_pose(), c.to_pose());
        let left = a.mul(&b).mul(&c);
        let right = a.mul(&b.mul(&c));
        prop_assert!(pose_close(&left, &right, 1e-12));
    }

    #[test]
    fn euler_rotations_are_orthonormal(a in arb_rel()) {
        prop_assert!(a.to_pose().orthonormality_error() < 1e-9);
    }

    #[test]
    fn accumulate_inverts_relatives(rels in prop::collection::vec(arb_rel(), 1..30), start in arb_rel()) {
        let traj = accumulate(&start.to_pose(), &rels).unwrap();
        let again = accumulate(&traj.poses()[0], &traj.relatives().unwrap()).unwrap();
        for (p, q) in traj.poses().iter().zip(again.poses()) {
            prop_assert!(pose_close(p, q, 1e-9));
        }
    }

    #[test]
    fn rmse_zero_iff_equal(a in prop::collection::vec(arb_rel(), 1..10), i in 0usize..10, k in 0usize..6, d in 1e-6..1.0f64) {
        prop_assert_eq!(rmse(&a, &a).unwrap(), (0.0, 0.0));
        let mut b = a.clone();
        let i = i % b.len();
        let mut x = b[i].to_array();
        x[k] += d;
        b[i] = RelPose::from_slice(&x);
        let (t, r) = rmse(&b, &a).unwrap();
        prop_assert!(t + r > 0.0);
    }
}
