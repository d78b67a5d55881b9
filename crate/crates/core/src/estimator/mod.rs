//! Dual-horizon state estimator.
//!
//! A short encoder sees the last 6 observations and regresses `v_z`; a long
//! encoder sees 15 observations at stride 3 (about 0.9 s) and regresses
//! `(v_x, v_y, h)`. Each also emits a 16-dimensional latent trained to
//! predict the embedding of a future observation (`t + 1` for the short
//! branch, `t + 6` for the long one) under an InfoNCE loss. Future
//! observations are embedded by a target encoder that tracks an online copy
//! through an exponential moving average and never receives gradients.
//!
//! The fused feature is `z = [v_x, v_y, v_z, h, h_s, h_l]`.

mod checkpoint;
mod loss;
mod mlp;

use std::collections::VecDeque;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{Observation, OBS_DIM};
use crate::harness::{LogRecord, OnlineEstimator};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC};
pub use loss::{infonce_loss, regression_loss, InfoNce};
pub use mlp::{flatten_grads, Adam, Layer, Mlp, MlpCache};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("input has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("contrastive batch of {0} is too small")]
    BatchTooSmall(usize),
    #[error("positive index map does not match the batch")]
    Positives,
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("non-finite loss at step {step}: reg {reg}, short {short}, long {long}")]
    NonFinite { step: u64, reg: f64, short: f64, long: f64 },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("no training samples")]
    Empty,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("fused layout: {0}")]
    Layout(&'static str),
}

/// Index of each estimated quantity in `(v_x, v_y, v_z, h)`.
pub const VX: usize = 0;
pub const VY: usize = 1;
pub const VZ: usize = 2;
pub const H: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Dual,
    ShortOnly,
    LongOnly,
}

impl Mode {
    pub fn code(self) -> u8 {
        match self {
            Mode::Dual => 0,
            Mode::ShortOnly => 1,
            Mode::LongOnly => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [Mode::Dual, Mode::ShortOnly, Mode::LongOnly].into_iter().find(|m| m.code() == c)
    }

    /// Quantities regressed by the short branch, in output order.
    pub fn short_explicit(self) -> &'static [usize] {
        match self {
            Mode::Dual => &[VZ],
            Mode::ShortOnly => &[VX, VY, VZ, H],
            Mode::LongOnly => &[],
        }
    }

    pub fn long_explicit(self) -> &'static [usize] {
        match self {
            Mode::Dual => &[VX, VY, H],
            Mode::LongOnly => &[VX, VY, VZ, H],
            Mode::ShortOnly => &[],
        }
    }

    pub fn has_short(self) -> bool {
        self != Mode::LongOnly
    }

    pub fn has_long(self) -> bool {
        self != Mode::ShortOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub mode: Mode,
    pub hidden: Vec<usize>,
    pub phi_hidden: Vec<usize>,
    pub latent_dim: usize,
    pub short_frames: usize,
    pub long_frames: usize,
    pub long_stride: usize,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Dual,
            hidden: vec![128, 64],
            phi_hidden: vec![64],
            latent_dim: 16,
            short_frames: 6,
            long_frames: 15,
            long_stride: 3,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn short_dims(&self) -> Vec<usize> {
        self.dims(self.short_frames * OBS_DIM, self.mode.short_explicit().len())
    }

    pub fn long_dims(&self) -> Vec<usize> {
        self.dims(self.long_frames * OBS_DIM, self.mode.long_explicit().len())
    }

    pub fn phi_dims(&self) -> Vec<usize> {
        let mut d = vec![OBS_DIM];
        d.extend(&self.phi_hidden);
        d.push(self.latent_dim);
        d
    }

    fn dims(&self, input: usize, explicit: usize) -> Vec<usize> {
        let mut d = vec![input];
        d.extend(&self.hidden);
        d.push(explicit + self.latent_dim);
        d
    }

    /// Frames the history must hold to fill both windows.
    pub fn history_len(&self) -> usize {
        ((self.long_frames.max(1) - 1) * self.long_stride + 1).max(self.short_frames)
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if self.latent_dim == 0 || self.short_frames == 0 || self.long_frames == 0 || self.long_stride == 0 {
            return Err(EstimatorError::Config("frame counts, stride and latent size must be positive".into()));
        }
        if self.hidden.iter().chain(&self.phi_hidden).any(|&h| h == 0) {
            return Err(EstimatorError::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_reg: f64,
    pub lambda_s: f64,
    pub lambda_l: f64,
    pub tau: f64,
    pub delta_s: usize,
    pub delta_l: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// EMA coefficient of the target encoder.
    pub target_update: f64,
    pub steps: u64,
    pub seed: u64,
    /// Weight each regressed quantity by the inverse variance of its target.
    pub normalize_targets: bool,
    pub test_fraction: f64,
    pub split_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_reg: 1.0,
            lambda_s: 0.1,
            lambda_l: 0.1,
            tau: 0.1,
            delta_s: 1,
            delta_l: 6,
            batch_size: 256,
            learning_rate: 1e-3,
            target_update: 0.995,
            steps: 2000,
            seed: 0,
            normalize_targets: true,
            test_fraction: 0.1,
            split_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let bad = |m: &str| Err(EstimatorError::Config(m.into()));
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if [self.lambda_reg, self.lambda_s, self.lambda_l].iter().any(|l| !(*l >= 0.0)) {
            return bad("loss weights must be non-negative");
        }
        if self.delta_s == 0 || self.delta_l == 0 {
            return bad("offsets must be at least one step");
        }
        if self.batch_size < 2 {
            return bad("batch must hold at least two samples");
        }
        if !(self.learning_rate > 0.0) || !(0.0..=1.0).contains(&self.target_update) {
            return bad("learning rate must be positive and the EMA coefficient in [0, 1]");
        }
        Ok(())
    }

    pub fn max_delta(&self) -> usize {
        self.delta_s.max(self.delta_l)
    }
}

/// Ring buffer of recent observations. Until it fills, missing history
/// slots repeat the earliest frame.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    frames: VecDeque<[f64; OBS_DIM]>,
    capacity: usize,
}

/// Indices of a window ending at `t`, oldest first, clamped at 0.
pub fn window_indices(t: usize, frames: usize, stride: usize) -> impl Iterator<Item = usize> {
    (0..frames).map(move |k| t.saturating_sub((frames - 1 - k) * stride))
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            frames: VecDeque::with_capacity(capacity),
            capacity: capacity.max(1),
        }
    }

    pub fn for_config(cfg: &EstimatorConfig) -> Self {
        Self::new(cfg.history_len())
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn push(&mut self, obs: [f64; OBS_DIM]) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(obs);
    }

    /// Flattened window of `frames` frames `stride` apart, oldest first.
    pub fn window(&self, frames: usize, stride: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(frames * OBS_DIM);
        if self.frames.is_empty() {
            out.resize(frames * OBS_DIM, 0.0);
            return out;
        }
        let newest = self.frames.len() - 1;
        for i in window_indices(newest, frames, stride) {
            out.extend_from_slice(&self.frames[i]);
        }
        out
    }
}

/// Per-feature input standardization and target statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
    pub target_mean: [f64; 4],
    pub target_std: [f64; 4],
}

impl Default for Normalizer {
    fn default() -> Self {
        Self {
            obs_mean: vec![0.0; OBS_DIM],
            obs_std: vec![1.0; OBS_DIM],
            target_mean: [0.0; 4],
            target_std: [1.0; 4],
        }
    }
}

fn floor_std(s: f64) -> f64 {
    if s > 1e-6 && s.is_finite() {
        s
    } else {
        1.0
    }
}

impl Normalizer {
    pub fn fit(data: &EstimatorData) -> Self {
        let n = data.seqs.iter().map(|s| s.obs.len()).sum::<usize>().max(1) as f64;
        let mut obs_mean = vec![0.0; OBS_DIM];
        let mut t_mean = [0.0; 4];
        for s in &data.seqs {
            for (o, t) in s.obs.iter().zip(&s.truth) {
                for k in 0..OBS_DIM {
                    obs_mean[k] += o[k] / n;
                }
                for k in 0..4 {
                    t_mean[k] += t[k] / n;
                }
            }
        }
        let mut obs_var = vec![0.0; OBS_DIM];
        let mut t_var = [0.0; 4];
        for s in &data.seqs {
            for (o, t) in s.obs.iter().zip(&s.truth) {
                for k in 0..OBS_DIM {
                    obs_var[k] += (o[k] - obs_mean[k]).powi(2) / n;
                }
                for k in 0..4 {
                    t_var[k] += (t[k] - t_mean[k]).powi(2) / n;
                }
            }
        }
        Self {
            obs_mean,
            obs_std: obs_var.iter().map(|v| floor_std(v.sqrt())).collect(),
            target_mean: t_mean,
            target_std: t_var.map(|v| floor_std(v.sqrt())),
        }
    }

    pub fn obs(&self, o: &[f64; OBS_DIM]) -> [f64; OBS_DIM] {
        let mut out = [0.0; OBS_DIM];
        for k in 0..OBS_DIM {
            out[k] = (o[k] - self.obs_mean[k]) / self.obs_std[k];
        }
        out
    }

    fn history(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().enumerate().map(|(i, v)| (v - self.obs_mean[i % OBS_DIM]) / self.obs_std[i % OBS_DIM]).collect()
    }
}

/// One episode: observations and `(v_x, v_y, v_z, h)` per step.
#[derive(Debug, Clone, Default)]
pub struct Sequence {
    pub obs: Vec<[f64; OBS_DIM]>,
    pub truth: Vec<[f64; 4]>,
}

#[derive(Debug, Clone, Default)]
pub struct EstimatorData {
    pub seqs: Vec<Sequence>,
    /// `(sequence, step)` pairs with both future offsets available.
    pub anchors: Vec<(u32, u32)>,
}

impl EstimatorData {
    pub fn from_sequences(seqs: Vec<Sequence>, max_delta: usize) -> Self {
        let mut anchors = Vec::new();
        for (si, s) in seqs.iter().enumerate() {
            for t in 0..s.obs.len().saturating_sub(max_delta) {
                anchors.push((si as u32, t as u32));
            }
        }
        Self { seqs, anchors }
    }

    pub fn from_logs(logs: &[Vec<LogRecord>], max_delta: usize) -> Self {
        let seqs = logs
            .iter()
            .map(|log| Sequence {
                obs: log.iter().map(|r| r.observation).collect(),
                truth: log.iter().map(|r| r.truth()).collect(),
            })
            .collect();
        Self::from_sequences(seqs, max_delta)
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

/// A minibatch in normalized input units; `truth` stays in physical units.
#[derive(Debug, Clone)]
pub struct Batch {
    pub short: Array2<f64>,
    pub long: Array2<f64>,
    pub next_short: Array2<f64>,
    pub next_long: Array2<f64>,
    pub truth: Array2<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.truth.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.nrows() == 0
    }
}

pub fn make_batch(data: &EstimatorData, idx: &[usize], cfg: &EstimatorConfig, tc: &TrainConfig, norm: &Normalizer) -> Batch {
    let b = idx.len();
    let mut short = Array2::zeros((b, cfg.short_frames * OBS_DIM));
    let mut long = Array2::zeros((b, cfg.long_frames * OBS_DIM));
    let mut next_short = Array2::zeros((b, OBS_DIM));
    let mut next_long = Array2::zeros((b, OBS_DIM));
    let mut truth = Array2::zeros((b, 4));
    for (row, &i) in idx.iter().enumerate() {
        let (si, t) = data.anchors[i];
        let seq = &data.seqs[si as usize];
        let t = t as usize;
        let last = seq.obs.len() - 1;
        let fill = |dst: &mut Array2<f64>, frames: usize, stride: usize| {
            for (k, j) in window_indices(t, frames, stride).enumerate() {
                let o = norm.obs(&seq.obs[j]);
                dst.slice_mut(s![row, k * OBS_DIM..(k + 1) * OBS_DIM]).assign(&ndarray::aview1(&o));
            }
        };
        fill(&mut short, cfg.short_frames, 1);
        fill(&mut long, cfg.long_frames, cfg.long_stride);
        next_short.row_mut(row).assign(&ndarray::aview1(&norm.obs(&seq.obs[(t + tc.delta_s).min(last)])));
        next_long.row_mut(row).assign(&ndarray::aview1(&norm.obs(&seq.obs[(t + tc.delta_l).min(last)])));
        truth.row_mut(row).assign(&ndarray::aview1(&seq.truth[t]));
    }
    Batch {
        short,
        long,
        next_short,
        next_long,
        truth,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Horizon {
    Short,
    Long,
}

/// Output of one encoder for a single history.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchOutput {
    pub horizon: Horizon,
    /// `(quantity index, value)` in physical units.
    pub explicit: Vec<(usize, f64)>,
    pub latent: Vec<f64>,
}

/// Full estimate for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorOutput {
    pub v_hat: [f64; 3],
    pub h_hat: f64,
    pub h_s: Vec<f64>,
    pub h_l: Vec<f64>,
}

impl EstimatorOutput {
    pub fn quantities(&self) -> [f64; 4] {
        [self.v_hat[0], self.v_hat[1], self.v_hat[2], self.h_hat]
    }

    pub fn z(&self) -> Vec<f64> {
        let mut z = self.quantities().to_vec();
        z.extend(&self.h_s);
        z.extend(&self.h_l);
        z
    }
}

/// `z = [v_x, v_y, v_z, h, h_s, h_l]` from a short and a long branch output,
/// passed in that order.
pub fn fuse(short: &BranchOutput, long: &BranchOutput) -> Result<Vec<f64>, EstimatorError> {
    if short.horizon != Horizon::Short || long.horizon != Horizon::Long {
        return Err(EstimatorError::Layout("expected the short branch first, then the long branch"));
    }
    let mut q = [f64::NAN; 4];
    for &(k, v) in short.explicit.iter().chain(&long.explicit) {
        q[k] = v;
    }
    if q.iter().any(|v| v.is_nan()) {
        return Err(EstimatorError::Layout("branches do not cover v_x, v_y, v_z and h"));
    }
    let mut z = q.to_vec();
    z.extend(&short.latent);
    z.extend(&long.latent);
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub reg: f64,
    pub short: f64,
    pub long: f64,
    pub total: f64,
    /// Contrastive loss of the online target encoder.
    pub target: f64,
}

#[derive(Debug, Clone)]
pub struct Grads {
    pub short: Option<Vec<Layer>>,
    pub long: Option<Vec<Layer>>,
    pub phi: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualHorizonEstimator {
    pub config: EstimatorConfig,
    pub norm: Normalizer,
    pub short: Option<Mlp>,
    pub long: Option<Mlp>,
    pub phi_online: Mlp,
    pub phi_target: Mlp,
    pub step: u64,
}

fn add_layers(acc: &mut Vec<Layer>, g: Vec<Layer>) {
    if acc.is_empty() {
        *acc = g;
    } else {
        for (a, b) in acc.iter_mut().zip(g) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }
}

impl DualHorizonEstimator {
    pub fn new(config: EstimatorConfig, norm: Normalizer) -> Result<Self, EstimatorError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let short = config.mode.has_short().then(|| Mlp::new(&config.short_dims(), &mut rng));
        let long = config.mode.has_long().then(|| Mlp::new(&config.long_dims(), &mut rng));
        let phi_online = Mlp::new(&config.phi_dims(), &mut rng);
        Ok(Self {
            phi_target: phi_online.clone(),
            phi_online,
            short,
            long,
            norm,
            config,
            step: 0,
        })
    }

    fn branch_output(&self, horizon: Horizon, row: &[f64]) -> BranchOutput {
        let explicit_idx = match horizon {
            Horizon::Short => self.config.mode.short_explicit(),
            Horizon::Long => self.config.mode.long_explicit(),
        };
        let ne = explicit_idx.len();
        BranchOutput {
            horizon,
            explicit: explicit_idx
                .iter()
                .enumerate()
                .map(|(c, &q)| (q, self.norm.target_mean[q] + self.norm.target_std[q] * row[c]))
                .collect(),
            latent: row[ne..].to_vec(),
        }
    }

    /// Short encoder on a raw flattened history of `short_frames` observations.
    pub fn encode_short(&self, history: &[f64]) -> Result<BranchOutput, EstimatorError> {
        let net = self.short.as_ref().ok_or(EstimatorError::Config("no short branch in this mode".into()))?;
        let out = net.forward_one(&self.norm.history(history))?;
        Ok(self.branch_output(Horizon::Short, &out))
    }

    /// Long encoder on a raw flattened history of `long_frames` observations.
    pub fn encode_long(&self, history: &[f64]) -> Result<BranchOutput, EstimatorError> {
        let net = self.long.as_ref().ok_or(EstimatorError::Config("no long branch in this mode".into()))?;
        let out = net.forward_one(&self.norm.history(history))?;
        Ok(self.branch_output(Horizon::Long, &out))
    }

    /// Estimates from raw short and long histories. A branch absent in the
    /// configured mode contributes a zero latent.
    pub fn estimate(&self, short: &[f64], long: &[f64]) -> Result<EstimatorOutput, EstimatorError> {
        let zero = |h| BranchOutput {
            horizon: h,
            explicit: Vec::new(),
            latent: vec![0.0; self.config.latent_dim],
        };
        let s = if self.short.is_some() { self.encode_short(short)? } else { zero(Horizon::Short) };
        let l = if self.long.is_some() { self.encode_long(long)? } else { zero(Horizon::Long) };
        let z = fuse(&s, &l)?;
        let d = self.config.latent_dim;
        Ok(EstimatorOutput {
            v_hat: [z[0], z[1], z[2]],
            h_hat: z[3],
            h_s: z[4..4 + d].to_vec(),
            h_l: z[4 + d..].to_vec(),
        })
    }

    /// Physical-unit `(v_x, v_y, v_z, h)` for a normalized batch.
    pub fn predict(&self, short: ArrayView2<f64>, long: ArrayView2<f64>) -> Result<Array2<f64>, EstimatorError> {
        let b = short.nrows();
        let mut est = Array2::zeros((b, 4));
        let mode = self.config.mode;
        let mut put = |y: &Array2<f64>, idx: &[usize]| {
            for (c, &q) in idx.iter().enumerate() {
                let col = y.column(c).mapv(|v| self.norm.target_mean[q] + self.norm.target_std[q] * v);
                est.column_mut(q).assign(&col);
            }
        };
        if let Some(net) = &self.short {
            put(&net.forward(short)?, mode.short_explicit());
        }
        if let Some(net) = &self.long {
            put(&net.forward(long)?, mode.long_explicit());
        }
        Ok(est)
    }

    pub fn target_weights(&self, tc: &TrainConfig) -> [f64; 4] {
        if tc.normalize_targets {
            self.norm.target_std.map(|s| 1.0 / (s * s))
        } else {
            [1.0; 4]
        }
    }

    /// `L_DH` and its gradients for the two encoders, plus the online target
    /// encoder's contrastive loss and gradient.
    pub fn loss_and_grads(&self, batch: &Batch, tc: &TrainConfig) -> Result<(LossBreakdown, Grads), EstimatorError> {
        let b = batch.len();
        let mode = self.config.mode;
        let d = self.config.latent_dim;
        let positives: Vec<usize> = (0..b).collect();

        let fs = self.short.as_ref().map(|n| n.forward_cached(batch.short.view())).transpose()?;
        let fl = self.long.as_ref().map(|n| n.forward_cached(batch.long.view())).transpose()?;

        let mut est = Array2::zeros((b, 4));
        for (f, idx) in [(&fs, mode.short_explicit()), (&fl, mode.long_explicit())] {
            if let Some((y, _)) = f {
                for (c, &q) in idx.iter().enumerate() {
                    let col = y.column(c).mapv(|v| self.norm.target_mean[q] + self.norm.target_std[q] * v);
                    est.column_mut(q).assign(&col);
                }
            }
        }
        let (reg, g_est) = regression_loss(est.view(), batch.truth.view(), &self.target_weights(tc));

        let mut out = LossBreakdown {
            reg,
            ..Default::default()
        };
        let mut phi_grads = Vec::new();
        let mut branch_grads = [None, None];
        let branches = [
            (fs, mode.short_explicit(), &batch.next_short, tc.lambda_s, &self.short),
            (fl, mode.long_explicit(), &batch.next_long, tc.lambda_l, &self.long),
        ];
        for (slot, (f, idx, next, lambda, net)) in branches.into_iter().enumerate() {
            let (Some((y, cache)), Some(net)) = (f, net) else { continue };
            let ne = idx.len();
            let mut gy = Array2::zeros(y.raw_dim());
            for (c, &q) in idx.iter().enumerate() {
                let g = g_est.column(q).mapv(|v| tc.lambda_reg * v * self.norm.target_std[q]);
                gy.column_mut(c).assign(&g);
            }
            let latent = y.slice(s![.., ne..ne + d]);
            let targets = self.phi_target.forward(next.view())?;
            let r = infonce_loss(latent, targets.view(), &positives, tc.tau)?;
            if slot == 0 {
                out.short = r.loss;
            } else {
                out.long = r.loss;
            }
            if lambda > 0.0 {
                gy.slice_mut(s![.., ne..ne + d]).scaled_add(lambda, &r.grad_anchors);
                let (po, pcache) = self.phi_online.forward_cached(next.view())?;
                let rt = infonce_loss(latent, po.view(), &positives, tc.tau)?;
                out.target += lambda * rt.loss;
                add_layers(&mut phi_grads, self.phi_online.backward(&pcache, &(rt.grad_targets * lambda)));
            }
            branch_grads[slot] = Some(net.backward(&cache, &gy));
        }
        out.total = tc.lambda_reg * out.reg + tc.lambda_s * out.short + tc.lambda_l * out.long;
        if phi_grads.is_empty() {
            phi_grads = self
                .phi_online
                .layers
                .iter()
                .map(|l| Layer {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: ndarray::Array1::zeros(l.b.len()),
                })
                .collect();
        }
        let [short, long] = branch_grads;
        Ok((out, Grads { short, long, phi: phi_grads }))
    }

    /// MSE on every anchor of `data`, ordered `(v_z, v_x, v_y, h)`.
    pub fn evaluate(&self, data: &EstimatorData) -> Result<[f64; 4], EstimatorError> {
        if data.is_empty() {
            return Err(EstimatorError::Empty);
        }
        let tc = TrainConfig::default();
        let mut sq = [0.0; 4];
        let idx: Vec<usize> = (0..data.len()).collect();
        for chunk in idx.chunks(1024) {
            let batch = make_batch(data, chunk, &self.config, &tc, &self.norm);
            let est = self.predict(batch.short.view(), batch.long.view())?;
            let err = (&est - &batch.truth).mapv(|v| v * v).sum_axis(Axis(0));
            for (k, q) in [VZ, VX, VY, H].into_iter().enumerate() {
                sq[k] += err[q];
            }
        }
        Ok(sq.map(|s| s / data.len() as f64))
    }

    /// MSE of always predicting zero, same order as [`Self::evaluate`].
    pub fn zero_baseline(data: &EstimatorData) -> [f64; 4] {
        let mut sq = [0.0; 4];
        for &(si, t) in &data.anchors {
            let tr = data.seqs[si as usize].truth[t as usize];
            for (k, q) in [VZ, VX, VY, H].into_iter().enumerate() {
                sq[k] += tr[q] * tr[q];
            }
        }
        sq.map(|s| s / data.len().max(1) as f64)
    }

    pub fn runtime(self) -> EstimatorRuntime {
        EstimatorRuntime {
            buffer: HistoryBuffer::for_config(&self.config),
            model: self,
        }
    }
}

pub struct Trainer {
    pub model: DualHorizonEstimator,
    pub config: TrainConfig,
    adam_short: Option<Adam>,
    adam_long: Option<Adam>,
    adam_phi: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(model: DualHorizonEstimator, config: TrainConfig) -> Result<Self, EstimatorError> {
        config.validate()?;
        let lr = config.learning_rate;
        Ok(Self {
            adam_short: model.short.as_ref().map(|n| Adam::new(n, lr)),
            adam_long: model.long.as_ref().map(|n| Adam::new(n, lr)),
            adam_phi: Adam::new(&model.phi_online, lr),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            config,
        })
    }

    pub fn sample_batch(&mut self, data: &EstimatorData) -> Result<Batch, EstimatorError> {
        if data.is_empty() {
            return Err(EstimatorError::Empty);
        }
        let idx: Vec<usize> = (0..self.config.batch_size).map(|_| self.rng.random_range(0..data.len())).collect();
        Ok(make_batch(data, &idx, &self.model.config, &self.config, &self.model.norm))
    }

    /// One optimizer step on `batch`; the target encoder follows by EMA.
    pub fn step_on(&mut self, batch: &Batch) -> Result<LossBreakdown, EstimatorError> {
        let (loss, grads) = self.model.loss_and_grads(batch, &self.config)?;
        if !(loss.total.is_finite() && loss.target.is_finite()) {
            return Err(EstimatorError::NonFinite {
                step: self.model.step,
                reg: loss.reg,
                short: loss.short,
                long: loss.long,
            });
        }
        if let (Some(net), Some(opt), Some(g)) = (self.model.short.as_mut(), self.adam_short.as_mut(), grads.short.as_ref()) {
            opt.step(net, g);
        }
        if let (Some(net), Some(opt), Some(g)) = (self.model.long.as_mut(), self.adam_long.as_mut(), grads.long.as_ref()) {
            opt.step(net, g);
        }
        self.adam_phi.step(&mut self.model.phi_online, &grads.phi);
        let m = &mut self.model;
        m.phi_target.ema_from(&m.phi_online, self.config.target_update);
        m.step += 1;
        Ok(loss)
    }

    pub fn step(&mut self, data: &EstimatorData) -> Result<LossBreakdown, EstimatorError> {
        let batch = self.sample_batch(data)?;
        self.step_on(&batch)
    }

    /// Runs `steps` steps, returning the loss history.
    pub fn train(&mut self, data: &EstimatorData, steps: u64) -> Result<Vec<LossBreakdown>, EstimatorError> {
        (0..steps).map(|_| self.step(data)).collect()
    }
}

/// Estimator fed one observation per control step.
#[derive(Debug, Clone)]
pub struct EstimatorRuntime {
    pub model: DualHorizonEstimator,
    buffer: HistoryBuffer,
}

impl EstimatorRuntime {
    pub fn output(&self) -> Result<EstimatorOutput, EstimatorError> {
        let c = &self.model.config;
        self.model.estimate(&self.buffer.window(c.short_frames, 1), &self.buffer.window(c.long_frames, c.long_stride))
    }
}

impl OnlineEstimator for EstimatorRuntime {
    fn reset(&mut self) {
        self.buffer.clear();
    }

    fn observe(&mut self, obs: &Observation) -> [f64; 4] {
        self.buffer.push(obs.to_vec());
        self.output().map(|o| o.quantities()).unwrap_or([f64::NAN; 4])
    }
}
