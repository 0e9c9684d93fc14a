use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use gvio::geometry::{write_kitti_poses, Pose};
use nalgebra::{Matrix3, Vector3};

const TINY: &str = r#"
seed = 3

[sim]
duration_s = 4.0
visual_dim = 8

[data]
sequences = 4
train_fraction = 0.5

[model]
visual_in = 8
visual_hidden = [6]
visual_feat = 4
inertial_channels = 3
inertial_feat = 4
hidden = 4
policy_hidden = [4]
head_hidden = 4

[schedule]
batch_size = 4
windows_per_epoch = 8

[schedule.warmup]
epochs = 2
lr = 1e-3

[schedule.joint]
epochs = 2
lr = 1e-3

[schedule.finetune]
epochs = 1
lr = 1e-4

[eval]
seeds = [0, 1]

[sweep]
ladder = [0.0, 10.0]
reference = 1
"#;

fn gvio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gvio")).args(args).env("RUST_LOG", "warn").output().expect("spawn gvio")
}

fn ok(args: &[&str]) -> String {
    let out = gvio(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path.to_str().unwrap().to_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn simulate_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["simulate", "--config", &cfg, "--out", s(&a)]);
    ok(&["simulate", "--config", &cfg, "--out", s(&b)]);
    let manifest = fs::read(a.join("dataset/manifest.json")).unwrap();
    assert_eq!(manifest, fs::read(b.join("dataset/manifest.json")).unwrap());
    assert_eq!(fs::read(a.join("dataset/seq000_imu.bin")).unwrap(), fs::read(b.join("dataset/seq000_imu.bin")).unwrap());
    let c = tmp.path().join("c");
    ok(&["simulate", "--config", &cfg, "--seed", "4", "--out", s(&c)]);
    assert_ne!(fs::read(a.join("dataset/seq000_imu.bin")).unwrap(), fs::read(c.join("dataset/seq000_imu.bin")).unwrap());
}

#[test]
fn warmup_train_eval_analyze_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let warm = tmp.path().join("warm");
    ok(&["warmup", "--config", &cfg, "--out", s(&warm)]);
    for f in ["checkpoint.json", "checkpoint.bin", "model.json", "warmup.json", "train_log.csv", "config.toml"] {
        assert!(warm.join(f).exists(), "{f}");
    }

    let run = tmp.path().join("run");
    let stdout = ok(&["train", "--config", &cfg, "--warm", s(&warm), "--lambda", "1e-4", "--out", s(&run)]);
    assert!(stdout.contains("lambda=1.000000e-4"), "{stdout}");
    for f in ["checkpoint.json", "checkpoint.bin", "report.csv", "poses_pred.txt", "poses_gt.txt", "train_log.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let report = fs::read_to_string(run.join("report.csv")).unwrap();
    // Header, two seeds, mean, std.
    assert_eq!(report.lines().count(), 5);
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1 + 3);
    assert_eq!(
        fs::read_to_string(run.join("poses_pred.txt")).unwrap().lines().count(),
        fs::read_to_string(run.join("poses_gt.txt")).unwrap().lines().count()
    );

    // The stored config is picked up when --config is omitted.
    let ev = tmp.path().join("eval");
    ok(&["eval", "--model", s(&run), "--mode", "regular:2", "--seeds", "5", "--out", s(&ev)]);
    let report = fs::read_to_string(ev.join("report.csv")).unwrap();
    assert!(report.lines().nth(1).unwrap().starts_with("regular:2,regular:2,5,"), "{report}");

    let an = tmp.path().join("analyze");
    ok(&["analyze", "--model", s(&run), "--out", s(&an)]);
    assert!(an.join("traces/usage_bins.csv").exists());
    assert!(an.join("plots/usage_bins.svg").exists());
    assert!(an.join("analysis.json").exists());
    let traces = fs::read_dir(an.join("traces")).unwrap().count();
    let plots = fs::read_dir(an.join("plots")).unwrap().count();
    // Two test sequences plus the usage tables.
    assert_eq!((traces, plots), (3, 3));

    let stdout = ok(&["metrics", "--pred", s(&run.join("poses_pred.txt")), "--gt", s(&run.join("poses_gt.txt"))]);
    assert!(stdout.contains("trans_rmse"));
}

#[test]
fn train_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["train", "--config", &cfg, "--out", s(&a)]);
    ok(&["train", "--config", &cfg, "--out", s(&b)]);
    for f in ["checkpoint.bin", "checkpoint.json", "report.csv", "poses_pred.txt", "warmup/checkpoint.bin"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_with_baselines() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("sweep");
    ok(&["sweep", "--config", &cfg, "--baselines", "--seeds", "0", "--out", s(&out)]);
    let summary = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert_eq!(fs::read_to_string(out.join("baselines.csv")).unwrap().lines().count(), 3);
    // Two learned runs and two baselines per entry, one seed and a mean row each.
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap().lines().count(), 1 + 6 * 2);
    assert!(out.join("lambda_1/checkpoint.bin").exists());
    assert!(out.join("warmup/warmup.json").exists());
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "version = 2\n").unwrap();
    assert_eq!(gvio(&["simulate", "--config", s(&bad), "--out", s(&tmp.path().join("x"))]).status.code(), Some(2));
    fs::write(&bad, "[model]\nvisual_in = 3\n").unwrap();
    assert_eq!(gvio(&["warmup", "--config", s(&bad), "--out", s(&tmp.path().join("x"))]).status.code(), Some(2));
    fs::write(&bad, "no_such_key = 1\n").unwrap();
    assert_eq!(gvio(&["warmup", "--config", s(&bad), "--out", s(&tmp.path().join("x"))]).status.code(), Some(2));
    let cfg = tiny_config(tmp.path());
    assert_eq!(gvio(&["train", "--config", &cfg, "--mode", "bernoulli:1.5"]).status.code(), Some(2));
    assert_eq!(gvio(&["train", "--config", &cfg, "--mode", "sometimes"]).status.code(), Some(2));
    assert_eq!(gvio(&["train", "--config", &cfg, "--lambda", "-1"]).status.code(), Some(2));
    assert_eq!(gvio(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let text = TINY.replace("[schedule.warmup]\nepochs = 2\nlr = 1e-3", "[schedule.warmup]\nepochs = 2\nlr = 1e300");
    let path = tmp.path().join("diverge.toml");
    fs::write(&path, text).unwrap();
    let out = gvio(&["warmup", "--config", s(&path), "--out", s(&tmp.path().join("w"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn metrics_on_a_scaled_straight_path() {
    let tmp = tempfile::tempdir().unwrap();
    // 301 frames, 1 m apart; the prediction is 5% too long everywhere.
    let path = |scale: f64| -> Vec<Pose> {
        (0..301).map(|i| Pose::new(Matrix3::identity(), Vector3::new(scale * i as f64, 0.0, 0.0))).collect()
    };
    let (pred, gt) = (tmp.path().join("pred.txt"), tmp.path().join("gt.txt"));
    fs::write(&pred, write_kitti_poses(&path(1.05))).unwrap();
    fs::write(&gt, write_kitti_poses(&path(1.0))).unwrap();
    let out_dir = tmp.path().join("m");
    let stdout = ok(&["metrics", "--pred", s(&pred), "--gt", s(&gt), "--out", s(&out_dir)]);
    assert!(stdout.contains("t_rel 5.0000%"), "{stdout}");
    assert!(out_dir.join("segments.csv").exists());

    fs::write(&pred, write_kitti_poses(&path(1.0)[..10])).unwrap();
    assert_eq!(gvio(&["metrics", "--pred", s(&pred), "--gt", s(&gt)]).status.code(), Some(2));
}
