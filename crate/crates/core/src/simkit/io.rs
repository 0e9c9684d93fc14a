//! Dataset directories.
//!
//! `manifest.json` holds the format tag and version, the generating config
//! and seed, the visual embedding (row-major `[visual_dim × 6]`), σ_v, and per
//! sequence its initial pose (`[R|t]` row-major, 12 values) and three arrays:
//!
//! - `seqNNN_visual.bin`: `[T × visual_dim]`
//! - `seqNNN_imu.bin`: `[T × 6 × (l+1)]`
//! - `seqNNN_gt.bin`: `[T × 8]` as `φ (3), v (3), speed, yaw rate`
//!
//! Arrays are little-endian `f64`, row-major; each carries its CRC-32.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{Dataset, ImuWindow, Sample, Sequence, SimConfig, SimError, IMU_CHANNELS};
use crate::geometry::{Pose, RelPose};

pub const DATASET_FORMAT: &str = "gvio-dataset";
pub const DATASET_VERSION: u32 = 1;
const GT_COLS: usize = 8;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayEntry {
    file: String,
    shape: Vec<usize>,
    crc32: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct SequenceEntry {
    id: usize,
    seed: u64,
    initial_pose: Vec<f64>,
    visual: ArrayEntry,
    imu: ArrayEntry,
    gt: ArrayEntry,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    seed: u64,
    config: SimConfig,
    visual_sigma: f64,
    embedding: Vec<f64>,
    sequences: Vec<SequenceEntry>,
}

fn to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn write_array(dir: &Path, file: String, shape: Vec<usize>, values: &[f64]) -> Result<ArrayEntry, SimError> {
    let bytes = to_bytes(values);
    fs::write(dir.join(&file), &bytes)?;
    Ok(ArrayEntry { file, shape, crc32: crc32fast::hash(&bytes) })
}

fn read_array(dir: &Path, entry: &ArrayEntry) -> Result<Vec<f64>, SimError> {
    let bytes = fs::read(dir.join(&entry.file))?;
    let expected: usize = entry.shape.iter().product();
    if bytes.len() != expected * 8 {
        return Err(SimError::Shape { file: entry.file.clone(), expected, found: bytes.len() / 8 });
    }
    if crc32fast::hash(&bytes) != entry.crc32 {
        return Err(SimError::Checksum { file: entry.file.clone() });
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn export_dataset(ds: &Dataset, dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    let mut sequences = Vec::with_capacity(ds.sequences.len());
    for seq in &ds.sequences {
        let t = seq.len();
        let vdim = seq.samples.first().map_or(ds.config.visual_dim, |s| s.visual.len());
        let wlen = seq.samples.first().map_or(ds.config.ticks_per_frame() + 1, |s| s.imu.len);
        let visual: Vec<f64> = seq.samples.iter().flat_map(|s| s.visual.iter().copied()).collect();
        let imu: Vec<f64> = seq.samples.iter().flat_map(|s| s.imu.data.iter().copied()).collect();
        let gt: Vec<f64> = seq
            .samples
            .iter()
            .flat_map(|s| {
                let r = s.gt_rel.to_array();
                r.into_iter().chain([s.gt_speed, s.gt_yaw_rate])
            })
            .collect();
        let stem = format!("seq{:03}", seq.id);
        sequences.push(SequenceEntry {
            id: seq.id,
            seed: seq.seed,
            initial_pose: seq.initial_pose.to_rows().to_vec(),
            visual: write_array(dir, format!("{stem}_visual.bin"), vec![t, vdim], &visual)?,
            imu: write_array(dir, format!("{stem}_imu.bin"), vec![t, IMU_CHANNELS, wlen], &imu)?,
            gt: write_array(dir, format!("{stem}_gt.bin"), vec![t, GT_COLS], &gt)?,
        });
    }
    let manifest = Manifest {
        format: DATASET_FORMAT.into(),
        version: DATASET_VERSION,
        seed: ds.seed,
        config: ds.config.clone(),
        visual_sigma: ds.visual_sigma,
        embedding: ds.embedding.clone(),
        sequences,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| SimError::Manifest(e.to_string()))?;
    fs::write(dir.join("manifest.json"), json)?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, SimError> {
    let text = fs::read_to_string(dir.join("manifest.json"))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| SimError::Manifest(e.to_string()))?;
    if m.format != DATASET_FORMAT {
        return Err(SimError::Manifest(format!("unknown format `{}`", m.format)));
    }
    if m.version != DATASET_VERSION {
        return Err(SimError::Version { found: m.version, expected: DATASET_VERSION });
    }
    let mut sequences = Vec::with_capacity(m.sequences.len());
    for e in &m.sequences {
        let check = |a: &ArrayEntry, rank: usize, t: usize| {
            if a.shape.len() != rank || a.shape[0] != t {
                Err(SimError::Manifest(format!("array {} has inconsistent shape {:?}", a.file, a.shape)))
            } else {
                Ok(())
            }
        };
        let t = e.gt.shape.first().copied().unwrap_or(0);
        check(&e.visual, 2, t)?;
        check(&e.imu, 3, t)?;
        check(&e.gt, 2, t)?;
        if e.gt.shape[1] != GT_COLS || e.imu.shape[1] != IMU_CHANNELS || e.initial_pose.len() != 12 {
            return Err(SimError::Manifest(format!("sequence {} has malformed entries", e.id)));
        }
        let visual = read_array(dir, &e.visual)?;
        let imu = read_array(dir, &e.imu)?;
        let gt = read_array(dir, &e.gt)?;
        let (vdim, wlen) = (e.visual.shape[1], e.imu.shape[2]);
        let samples = (0..t)
            .map(|i| {
                let g = &gt[i * GT_COLS..(i + 1) * GT_COLS];
                let w = IMU_CHANNELS * wlen;
                Sample {
                    visual: visual[i * vdim..(i + 1) * vdim].to_vec(),
                    imu: ImuWindow { len: wlen, data: imu[i * w..(i + 1) * w].to_vec() },
                    gt_rel: RelPose::from_slice(&g[..6]),
                    gt_speed: g[6],
                    gt_yaw_rate: g[7],
                }
            })
            .collect();
        let p = &e.initial_pose;
        let initial_pose = Pose::new(
            Matrix3::new(p[0], p[1], p[2], p[4], p[5], p[6], p[8], p[9], p[10]),
            Vector3::new(p[3], p[7], p[11]),
        );
        sequences.push(Sequence { id: e.id, seed: e.seed, initial_pose, samples });
    }
    Ok(Dataset { config: m.config, seed: m.seed, embedding: m.embedding, visual_sigma: m.visual_sigma, sequences })
}
