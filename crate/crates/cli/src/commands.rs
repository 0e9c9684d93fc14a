use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gvio::config::ExperimentConfig;
use gvio::geometry::{accumulate, kitti_rel_errors, parse_kitti_poses, rmse, segments_csv, write_kitti_poses, Trajectory};
use gvio::model::{load_model, save_model, PolicyMode, VioModel};
use gvio::simkit::{export_dataset, generate_dataset, Dataset};
use gvio::train::{
    compare_baselines, decision_trace, evaluate, log_csv, prepare_data, report_csv, reset_rate, run_sweep, train_single,
    usage_analysis, warmup as run_warmup, RunReport, WarmupResult,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Common;

/// Bad command-line input that clap cannot catch.
#[derive(Debug, Error)]
#[error("{0}")]
pub struct UsageError(pub String);

const CONFIG_FILE: &str = "config.toml";
const WARMUP_FILE: &str = "warmup.json";

#[derive(Serialize, Deserialize)]
struct WarmupInfo {
    l0: f64,
    fingerprint: String,
}

/// `--config`, else the `config.toml` stored next to `fallback`, else the
/// defaults; then the seed overrides.
fn load_config(common: &Common, fallback: Option<&Path>) -> Result<ExperimentConfig> {
    let stored = fallback.map(|d| d.join(CONFIG_FILE)).filter(|p| p.exists());
    let mut cfg = match common.config.as_ref().or(stored.as_ref()) {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(seeds) = &common.seeds {
        cfg.eval.seeds = seeds.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    fs::write(dir.join(CONFIG_FILE), cfg.to_toml())?;
    Ok(())
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn check_mode(mode: PolicyMode) -> Result<PolicyMode> {
    mode.validate().map_err(|e| UsageError(format!("--mode: {e}")))?;
    Ok(mode)
}

pub fn simulate(common: &Common) -> Result<()> {
    let cfg = load_config(common, None)?;
    prepare_out(&common.out, &cfg)?;
    let ds = generate_dataset(&cfg.sim, cfg.seed, cfg.data.sequences)?;
    export_dataset(&ds, &common.out.join("dataset"))?;
    println!(
        "{} sequences, {} intervals, visual sigma {:.5} -> {}",
        ds.sequences.len(),
        ds.num_samples(),
        ds.visual_sigma,
        common.out.join("dataset").display()
    );
    Ok(())
}

fn save_warmup(dir: &Path, cfg: &ExperimentConfig, warm: &WarmupResult) -> Result<()> {
    prepare_out(dir, cfg)?;
    save_model(&warm.model, dir)?;
    write(dir.join("train_log.csv"), &log_csv(&warm.log))?;
    let info = WarmupInfo { l0: warm.l0, fingerprint: cfg.fingerprint() };
    write(dir.join(WARMUP_FILE), &serde_json::to_string_pretty(&info)?)
}

fn load_warmup(dir: &Path) -> Result<WarmupResult> {
    let model = load_model(dir).with_context(|| format!("loading warm-up model from {}", dir.display()))?;
    let text = fs::read_to_string(dir.join(WARMUP_FILE)).with_context(|| format!("reading {WARMUP_FILE}"))?;
    let info: WarmupInfo = serde_json::from_str(&text)?;
    Ok(WarmupResult { model, log: Vec::new(), l0: info.l0 })
}

fn warm_or_run(cfg: &ExperimentConfig, warm: Option<&Path>, train: &Dataset, out: &Path) -> Result<WarmupResult> {
    match warm {
        Some(dir) => load_warmup(dir),
        None => {
            let w = run_warmup(cfg, train)?;
            save_warmup(&out.join("warmup"), cfg, &w)?;
            Ok(w)
        }
    }
}

pub fn warmup(common: &Common) -> Result<()> {
    let cfg = load_config(common, None)?;
    let (train, _) = prepare_data(&cfg)?;
    let warm = run_warmup(&cfg, &train)?;
    save_warmup(&common.out, &cfg, &warm)?;
    println!("warm-up final pose loss {:.6e} -> {}", warm.l0, common.out.display());
    Ok(())
}

/// `report.csv`, then KITTI pose files of the first seed: every test
/// sequence under `poses/`, and the first one as `poses_pred.txt` /
/// `poses_gt.txt`.
fn write_eval_outputs(out: &Path, reports: &[RunReport], report: &RunReport, test: &Dataset) -> Result<()> {
    write(out.join("report.csv"), &report_csv(reports))?;
    let Some(first) = report.seeds.first() else { return Ok(()) };
    for (i, (seq, r)) in test.sequences.iter().zip(&first.rollouts).enumerate() {
        let pred = write_kitti_poses(accumulate(&seq.initial_pose, &r.preds)?.poses());
        let gt = write_kitti_poses(seq.gt_trajectory()?.poses());
        write(out.join(format!("poses/seq{:03}_pred.txt", seq.id)), &pred)?;
        write(out.join(format!("poses/seq{:03}_gt.txt", seq.id)), &gt)?;
        if i == 0 {
            write(out.join("poses_pred.txt"), &pred)?;
            write(out.join("poses_gt.txt"), &gt)?;
        }
    }
    Ok(())
}

fn print_report(r: &RunReport) {
    let m = &r.mean;
    println!(
        "{}: usage {:.2}% flops/step {:.0} trans_rmse {:.5} m rot_rmse {:.5} deg t_rel {:.3}% r_rel {:.3} deg/100m",
        r.label,
        100.0 * m.usage,
        m.flops_per_step,
        m.trans_rmse,
        m.rot_rmse,
        m.t_rel,
        m.r_rel
    );
}

pub fn train(common: &Common, lambda: Option<f64>, mode: PolicyMode, warm: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(common, None)?;
    if let Some(l) = lambda {
        cfg.loss.lambda = l;
    }
    cfg.validate()?;
    let mode = check_mode(mode)?;
    let (train, test) = prepare_data(&cfg)?;
    prepare_out(&common.out, &cfg)?;
    let w = warm_or_run(&cfg, warm, &train, &common.out)?;
    let (model, log, report) = train_single(&cfg, &w, &train, &test, mode)?;
    save_model(&model, &common.out)?;
    write(common.out.join("train_log.csv"), &log_csv(&log))?;
    write_eval_outputs(&common.out, std::slice::from_ref(&report), &report, &test)?;
    print_report(&report);
    Ok(())
}

fn load_checkpoint(dir: &Path) -> Result<VioModel> {
    load_model(dir).with_context(|| format!("loading model from {}", dir.display()))
}

pub fn eval(common: &Common, model_dir: &Path, mode: PolicyMode) -> Result<()> {
    let cfg = load_config(common, Some(model_dir))?;
    let mode = check_mode(mode)?;
    let model = load_checkpoint(model_dir)?;
    let (_, test) = prepare_data(&cfg)?;
    prepare_out(&common.out, &cfg)?;
    let report = evaluate(&model, &test.sequences, mode, &cfg.eval.seeds, &mode.to_string(), &cfg.fingerprint())?;
    write_eval_outputs(&common.out, std::slice::from_ref(&report), &report, &test)?;
    print_report(&report);
    Ok(())
}

pub fn sweep(common: &Common, warm: Option<&Path>, baselines: bool) -> Result<()> {
    let cfg = load_config(common, None)?;
    let (train, test) = prepare_data(&cfg)?;
    prepare_out(&common.out, &cfg)?;
    let w = warm_or_run(&cfg, warm, &train, &common.out)?;
    let result = run_sweep(&cfg, &w, &train, &test)?;
    let mut reports = result.reports();
    let mut summary = String::from("fraction,lambda,usage_pct,trans_rmse_m,t_rel_pct,r_rel_deg_per_100m\n");
    for (k, e) in result.entries.iter().enumerate() {
        let dir = common.out.join(format!("lambda_{k}"));
        prepare_out(&dir, &cfg)?;
        save_model(&e.model, &dir)?;
        write(dir.join("train_log.csv"), &log_csv(&e.log))?;
        let m = &e.report.mean;
        summary += &format!("{},{:e},{:.4},{:.6},{:.4},{:.4}\n", e.fraction, e.lambda, 100.0 * m.usage, m.trans_rmse, m.t_rel, m.r_rel);
        print_report(&e.report);
    }
    write(common.out.join("sweep.csv"), &summary)?;
    if baselines {
        let mut rows = String::from("fraction,learned_t_rel,regular,regular_t_rel,regular_gap,bernoulli_t_rel,bernoulli_gap,wins\n");
        for e in &result.entries {
            let c = compare_baselines(&cfg, &w, &train, &test, e)?;
            rows += &format!(
                "{},{:.4},{},{:.4},{:.4},{:.4},{:.4},{}\n",
                e.fraction,
                c.learned.mean.t_rel,
                c.regular.mode,
                c.regular.mean.t_rel,
                c.regular_gap,
                c.bernoulli.mean.t_rel,
                c.bernoulli_gap,
                c.wins()
            );
            print_report(&c.regular);
            print_report(&c.bernoulli);
            reports.push(c.regular);
            reports.push(c.bernoulli);
        }
        write(common.out.join("baselines.csv"), &rows)?;
    }
    write(common.out.join("report.csv"), &report_csv(&reports))?;
    Ok(())
}

#[derive(Serialize)]
struct AnalysisSummary {
    usage: f64,
    speed_spearman: Option<f64>,
    yaw_rate_spearman: Option<f64>,
    firings: usize,
    resets: usize,
    reset_rate: Option<f64>,
}

pub fn analyze(common: &Common, model_dir: &Path) -> Result<()> {
    let cfg = load_config(common, Some(model_dir))?;
    let model = load_checkpoint(model_dir)?;
    let (_, test) = prepare_data(&cfg)?;
    prepare_out(&common.out, &cfg)?;
    let report = evaluate(&model, &test.sequences, PolicyMode::Learned, &cfg.eval.seeds, "learned", &cfg.fingerprint())?;
    write(common.out.join("report.csv"), &report_csv(std::slice::from_ref(&report)))?;
    let tables = usage_analysis(&report, &test.sequences)?;
    write(common.out.join("traces/usage_bins.csv"), &tables.to_csv())?;
    write(common.out.join("plots/usage_bins.svg"), &tables.to_svg())?;
    for seq in &test.sequences {
        let trace = decision_trace(&report, &test.sequences, seq.id, 0)?;
        let stem = format!("seq{:03}_seed{}", seq.id, trace.seed);
        write(common.out.join(format!("traces/{stem}.csv")), &trace.to_csv())?;
        write(common.out.join(format!("plots/{stem}.svg")), &trace.to_svg())?;
    }
    let resets = reset_rate(report.seeds.iter().flat_map(|s| &s.rollouts));
    let summary = AnalysisSummary {
        usage: report.mean.usage,
        speed_spearman: tables.speed_spearman(),
        yaw_rate_spearman: tables.yaw_spearman(),
        firings: resets.firings,
        resets: resets.resets,
        reset_rate: resets.rate(),
    };
    write(common.out.join("analysis.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!(
        "usage {:.2}%, speed rho {:?}, yaw-rate rho {:?}, reset after {} of {} firings",
        100.0 * summary.usage,
        summary.speed_spearman,
        summary.yaw_rate_spearman,
        summary.resets,
        summary.firings
    );
    Ok(())
}

fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let poses = parse_kitti_poses(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Trajectory::at_frame_rate(poses)?)
}

pub fn metrics(pred: &Path, gt: &Path, out: Option<&Path>) -> Result<()> {
    let (p, g) = (read_trajectory(pred)?, read_trajectory(gt)?);
    if p.len() != g.len() {
        return Err(UsageError(format!("{} predicted poses against {} ground-truth poses", p.len(), g.len())).into());
    }
    let (t, r) = rmse(&p.relatives()?, &g.relatives()?)?;
    println!("trans_rmse {t:.6} m, rot_rmse {:.6} deg", r.to_degrees());
    match kitti_rel_errors(&p, &g) {
        Ok(e) => {
            println!("t_rel {:.4}%, r_rel {:.4} deg/100m over {} segments", e.t_rel, e.r_rel, e.segments.len());
            if let Some(dir) = out {
                write(dir.join("segments.csv"), &segments_csv(&e.segments))?;
            }
        }
        Err(gvio::geometry::GeometryError::NoSegments) => println!("path too short for 100 m segments"),
        Err(e) => return Err(e.into()),
    }
    Ok(())
}
