//! The gated visual-inertial network.
//!
//! Per frame interval: the inertial encoder turns the `[6 × 11]` IMU window
//! into `x_i`; the policy reads the previous top-layer hidden state and `x_i`
//! and decides whether to run the visual encoder; the fused vector
//! `z = [d·x_v ; x_i]` (a zero block when skipped) drives a two-layer LSTM
//! whose top hidden state feeds a two-layer regression head emitting
//! `(φ̂, v̂)`.
//!
//! Conventions: policy output index 0 means "use visual"; the first interval
//! of every rollout uses visual; LSTM gates are stacked (i, f, g, o).

mod checkpoint;
mod rollout;

pub use checkpoint::{load_model, save_model, ModelManifest, MODEL_FORMAT, MODEL_VERSION};
pub use rollout::{
    rollout, rollout_train, Batch, GateGrad, PolicyMode, RolloutResult, TrainOptions, TrainRollout,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gumbel::GumbelError;
use crate::nn::{Binding, Conv1d, Linear, LstmCell, LstmState, Mlp, NnError, ParamStore};
use crate::simkit::{Dataset, ImuWindow, IMU_CHANNELS};
use crate::tensor::{Graph, Tensor, TensorError, Var};
use crate::{seeded_rng, Rng};

/// Parameter-name prefix of the policy network.
pub const POLICY_PREFIX: &str = "policy.";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Gumbel(#[from] GumbelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("IMU window has length {got}, expected {expected}")]
    Window { expected: usize, got: usize },
    #[error("visual feature required when d = 1")]
    MissingVisual,
    #[error("rollout needs at least one interval")]
    EmptySequence,
    #[error("regular skipping period must be at least 1, got {0}")]
    Period(usize),
    #[error("bernoulli probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("model i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("model manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub visual_in: usize,
    pub visual_hidden: Vec<usize>,
    pub visual_feat: usize,
    pub inertial_channels: usize,
    pub inertial_feat: usize,
    /// IMU samples per interval, `l + 1`.
    pub imu_window: usize,
    pub hidden: usize,
    pub policy_hidden: Vec<usize>,
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            visual_in: 64,
            visual_hidden: vec![256, 256],
            visual_feat: 64,
            inertial_channels: 8,
            inertial_feat: 32,
            imu_window: 11,
            hidden: 64,
            policy_hidden: vec![32, 32],
            head_hidden: 32,
        }
    }
}

impl ModelConfig {
    pub fn fused_dim(&self) -> usize {
        self.visual_feat + self.inertial_feat
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [self.visual_in, self.visual_feat, self.inertial_channels, self.inertial_feat, self.hidden, self.head_hidden];
        if dims.contains(&0) || self.visual_hidden.contains(&0) || self.policy_hidden.contains(&0) {
            return Err(ModelError::Config("all dimensions must be positive".into()));
        }
        if self.imu_window < 2 {
            return Err(ModelError::Config(format!("imu_window {} is too short", self.imu_window)));
        }
        Ok(())
    }
}

/// Three 1-D convolutions (ReLU after each) and a linear layer.
#[derive(Debug, Clone)]
pub struct InertialEncoder {
    pub convs: [Conv1d; 3],
    pub fc: Linear,
    pub window: usize,
}

impl InertialEncoder {
    fn new(store: &mut ParamStore, c: &ModelConfig) -> Self {
        let ch = c.inertial_channels;
        let convs = [
            Conv1d::new(store, "inertial.conv0", IMU_CHANNELS, ch, 3, 1, 1),
            Conv1d::new(store, "inertial.conv1", ch, ch, 3, 2, 1),
            Conv1d::new(store, "inertial.conv2", ch, ch, 3, 2, 1),
        ];
        let mut len = c.imu_window;
        for conv in &convs {
            len = conv.output_len(len).expect("padded convs accept any length ≥ 1");
        }
        let fc = Linear::new(store, "inertial.fc", ch * len, c.inertial_feat);
        Self { convs, fc, window: c.imu_window }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut Rng) {
        self.convs.iter().for_each(|cv| cv.init(store, rng));
        self.fc.init(store, rng);
    }

    /// `imu: [batch × 6 × window]` to `[batch × inertial_feat]`.
    pub fn forward(&self, g: &mut Graph, p: &Binding, imu: Var) -> Result<Var, ModelError> {
        let shape = g.shape(imu).to_vec();
        if shape.len() != 3 || shape[2] != self.window {
            return Err(ModelError::Window { expected: self.window, got: shape.get(2).copied().unwrap_or(0) });
        }
        let mut x = imu;
        for conv in &self.convs {
            x = conv.forward(g, p, x)?;
            x = g.relu(x)?;
        }
        let flat = g.shape(x)[1] * g.shape(x)[2];
        let x = g.reshape(x, &[shape[0], flat])?;
        Ok(self.fc.forward(g, p, x)?)
    }

    pub fn flops(&self) -> u64 {
        let mut len = self.window;
        let mut total = 0;
        for conv in &self.convs {
            total += conv.flops(len);
            len = conv.output_len(len).unwrap_or(0);
        }
        total + self.fc.flops()
    }
}

/// Wide MLP standing in for an optical-flow encoder.
#[derive(Debug, Clone)]
pub struct VisualEncoder {
    pub mlp: Mlp,
}

impl VisualEncoder {
    pub fn forward(&self, g: &mut Graph, p: &Binding, v: Var) -> Result<Var, ModelError> {
        Ok(self.mlp.forward(g, p, v)?)
    }

    pub fn flops(&self) -> u64 {
        self.mlp.flops()
    }
}

/// Three-layer MLP over `[h_{t−1} ; x_i]` emitting two logits.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    pub mlp: Mlp,
}

impl PolicyNet {
    pub fn logits(&self, g: &mut Graph, p: &Binding, h_prev: Var, x_i: Var) -> Result<Var, ModelError> {
        let input = g.concat(h_prev, x_i, 1)?;
        Ok(self.mlp.forward(g, p, input)?)
    }

    pub fn flops(&self) -> u64 {
        self.mlp.flops()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RnnState {
    pub l1: LstmState,
    pub l2: LstmState,
}

/// Two stacked LSTM cells and a two-layer head on the top hidden state.
#[derive(Debug, Clone)]
pub struct PoseRnn {
    pub l1: LstmCell,
    pub l2: LstmCell,
    pub head: Mlp,
}

impl PoseRnn {
    pub fn zero_state(&self, g: &mut Graph, batch: usize) -> RnnState {
        RnnState { l1: self.l1.zero_state(g, batch), l2: self.l2.zero_state(g, batch) }
    }

    /// One step: returns the new state and the head output `[batch × 6]` in
    /// normalized target units, ordered `(φ, v)`.
    pub fn step(&self, g: &mut Graph, p: &Binding, z: Var, state: RnnState) -> Result<(RnnState, Var), ModelError> {
        let l1 = self.l1.step(g, p, z, state.l1)?;
        let l2 = self.l2.step(g, p, l1.h, state.l2)?;
        let out = self.head.forward(g, p, l2.h)?;
        Ok((RnnState { l1, l2 }, out))
    }

    pub fn flops(&self) -> u64 {
        self.l1.flops() + self.l2.flops() + self.head.flops()
    }
}

/// Per-step FLOPs by component (one sample).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopTable {
    pub visual: u64,
    pub inertial: u64,
    pub policy: u64,
    pub rnn_head: u64,
}

impl FlopTable {
    /// Cost paid every step: inertial encoder, pose network, and the policy
    /// when it is evaluated.
    pub fn fixed(&self, with_policy: bool) -> u64 {
        self.inertial + self.rnn_head + if with_policy { self.policy } else { 0 }
    }

    pub fn step(&self, visual_on: bool, with_policy: bool) -> u64 {
        self.fixed(with_policy) + if visual_on { self.visual } else { 0 }
    }

    /// Average per-step cost at a given usage rate.
    pub fn gated(&self, usage: f64, with_policy: bool) -> f64 {
        self.fixed(with_policy) as f64 + usage * self.visual as f64
    }
}

/// Affine input/output scaling fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub imu_mean: Vec<f64>,
    pub imu_std: Vec<f64>,
    pub visual_mean: Vec<f64>,
    pub visual_std: Vec<f64>,
    pub target_mean: Vec<f64>,
    pub target_std: Vec<f64>,
}

/// Standard-deviation floors: IMU channels that barely vary (gravity axis,
/// roll/pitch gyros) would otherwise amplify sensor noise.
const IMU_STD_FLOOR: f64 = 0.1;
const VISUAL_STD_FLOOR: f64 = 1e-3;
const TARGET_STD_FLOOR: f64 = 1e-3;

impl Normalizer {
    pub fn identity(visual_in: usize) -> Self {
        Self {
            imu_mean: vec![0.0; IMU_CHANNELS],
            imu_std: vec![1.0; IMU_CHANNELS],
            visual_mean: vec![0.0; visual_in],
            visual_std: vec![1.0; visual_in],
            target_mean: vec![0.0; 6],
            target_std: vec![1.0; 6],
        }
    }

    pub fn fit(ds: &Dataset) -> Self {
        let samples: Vec<_> = ds.sequences.iter().flat_map(|s| &s.samples).collect();
        let vdim = samples.first().map_or(ds.config.visual_dim, |s| s.visual.len());
        let mut imu = vec![Vec::new(); IMU_CHANNELS];
        let mut vis = vec![Vec::new(); vdim];
        let mut tgt = vec![Vec::new(); 6];
        for s in &samples {
            for (c, col) in imu.iter_mut().enumerate() {
                col.extend_from_slice(s.imu.channel(c));
            }
            for (d, col) in vis.iter_mut().enumerate() {
                col.push(s.visual[d]);
            }
            for (k, v) in s.gt_rel.to_array().into_iter().enumerate() {
                tgt[k].push(v);
            }
        }
        let stats = |cols: &[Vec<f64>], floor: f64| -> (Vec<f64>, Vec<f64>) {
            cols.iter()
                .map(|c| {
                    let (m, s) = mean_std(c);
                    (m, s.max(floor))
                })
                .unzip()
        };
        let (imu_mean, imu_std) = stats(&imu, IMU_STD_FLOOR);
        let (visual_mean, visual_std) = stats(&vis, VISUAL_STD_FLOOR);
        let (target_mean, target_std) = stats(&tgt, TARGET_STD_FLOOR);
        Self { imu_mean, imu_std, visual_mean, visual_std, target_mean, target_std }
    }

    pub fn imu(&self, w: &ImuWindow) -> Vec<f64> {
        let mut out = w.data.clone();
        for c in 0..IMU_CHANNELS {
            for v in &mut out[c * w.len..(c + 1) * w.len] {
                *v = (*v - self.imu_mean[c]) / self.imu_std[c];
            }
        }
        out
    }

    pub fn visual(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.visual_mean).zip(&self.visual_std).map(|((x, m), s)| (x - m) / s).collect()
    }
}

/// Population mean and standard deviation (two-pass).
pub(crate) fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// The full gated network with its parameters and data scaling.
#[derive(Debug, Clone)]
pub struct VioModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub inertial: InertialEncoder,
    pub visual: VisualEncoder,
    pub policy: PolicyNet,
    pub rnn: PoseRnn,
    pub normalizer: Normalizer,
}

impl VioModel {
    /// Builds the layers with zero parameters and an identity normalizer.
    pub fn zeros(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let inertial = InertialEncoder::new(&mut store, c);
        let mut vdims = vec![c.visual_in];
        vdims.extend(&c.visual_hidden);
        vdims.push(c.visual_feat);
        let visual = VisualEncoder { mlp: Mlp::new(&mut store, "visual", &vdims) };
        let mut pdims = vec![c.hidden + c.inertial_feat];
        pdims.extend(&c.policy_hidden);
        pdims.push(2);
        let policy = PolicyNet { mlp: Mlp::new(&mut store, "policy", &pdims) };
        let rnn = PoseRnn {
            l1: LstmCell::new(&mut store, "rnn.l1", c.fused_dim(), c.hidden),
            l2: LstmCell::new(&mut store, "rnn.l2", c.hidden, c.hidden),
            head: Mlp::new(&mut store, "head", &[c.hidden, c.head_hidden, 6]),
        };
        let normalizer = Normalizer::identity(c.visual_in);
        Ok(Self { config, store, inertial, visual, policy, rnn, normalizer })
    }

    /// Randomly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut m = Self::zeros(config)?;
        let mut rng = seeded_rng(seed);
        m.inertial.init(&mut m.store, &mut rng);
        m.visual.mlp.init(&mut m.store, &mut rng);
        m.policy.mlp.init(&mut m.store, &mut rng);
        m.rnn.l1.init(&mut m.store, &mut rng);
        m.rnn.l2.init(&mut m.store, &mut rng);
        m.rnn.head.init(&mut m.store, &mut rng);
        Ok(m)
    }

    pub fn flops(&self) -> FlopTable {
        FlopTable {
            visual: self.visual.flops(),
            inertial: self.inertial.flops(),
            policy: self.policy.flops(),
            rnn_head: self.rnn.flops(),
        }
    }

    /// `true` for every parameter outside the policy network.
    pub fn non_policy_mask(&self) -> Vec<bool> {
        self.store.ids().map(|id| !self.store.name(id).starts_with(POLICY_PREFIX)).collect()
    }
}

/// Analytic per-component FLOPs of a config.
pub fn count_flops(config: &ModelConfig) -> Result<FlopTable, ModelError> {
    Ok(VioModel::zeros(config.clone())?.flops())
}

/// `z = [x_v ; x_i]` when `d = 1`, `[0 ; x_i]` otherwise; the width is the
/// same in both branches.
pub fn fuse(g: &mut Graph, x_v: Option<Var>, x_i: Var, d: bool, visual_feat: usize) -> Result<Var, ModelError> {
    let batch = g.shape(x_i)[0];
    let v = match (d, x_v) {
        (true, Some(v)) => v,
        (true, None) => return Err(ModelError::MissingVisual),
        (false, _) => g.constant(Tensor::zeros(&[batch, visual_feat])),
    };
    Ok(g.concat(v, x_i, 1)?)
}
