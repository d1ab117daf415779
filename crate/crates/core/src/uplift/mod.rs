//! 2D-to-3D uplifting transformer with spin estimation.
//!
//! Per frame, the detected ball position and all visible table keypoints are
//! embedded by a small MLP plus learned identity vectors and contextualized
//! by a transformer embedding module; only the ball's token survives as the
//! frame's location token. A learnable spin token is prepended to the
//! location token sequence, which then runs through a two-stage transformer:
//! the first stage feeds a per-frame trajectory head, the remaining blocks
//! distill motion into the spin token for the spin head.
//!
//! Attention within the sequence uses rotary embeddings whose rotation angle
//! is proportional to each detection's quantized timestamp, so attention
//! logits depend only on time differences and the model is indifferent to
//! frame rate and missing frames.

mod checkpoint;
pub mod tape;

pub use checkpoint::{Checkpoint, CheckpointError};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::SynthSample;
use tape::{ParamGrads, ParamId, ParamStore, Tape, Var};

/// Spin normalization applied before the loss (rad/s).
pub const SPIN_NORM_RAD_S: f64 = 500.0;

#[derive(Debug, Error)]
pub enum UpliftError {
    #[error("need at least 2 valid frames, got {0}")]
    TooFewFrames(usize),
    #[error("timestamps must be strictly increasing (index {0})")]
    BadTimestamps(usize),
    #[error("keypoint index {0} out of range")]
    BadKeypointIndex(usize),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width.
    pub d: usize,
    /// Transformer blocks in the uplifting stack (both stages).
    pub l: usize,
    /// Attention heads per block.
    pub heads: usize,
    /// Blocks in the embedding module.
    pub embed_blocks: usize,
    /// Blocks in the second (spin) stage; the first stage has l − spin_blocks.
    pub spin_blocks: usize,
    /// Rotary time quantum (s).
    pub delta_t: f64,
    /// Feed-forward expansion factor.
    pub mlp_ratio: usize,
    /// Fully connected layers per output head.
    pub head_layers: usize,
    /// Spin normalization (rad/s); head outputs are scaled by this factor.
    pub spin_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 128,
            l: 16,
            heads: 4,
            embed_blocks: 4,
            spin_blocks: 4,
            delta_t: 0.002,
            mlp_ratio: 4,
            head_layers: 3,
            spin_scale: SPIN_NORM_RAD_S,
        }
    }
}

impl ModelConfig {
    /// Small configuration for fast tests and gradient checks.
    pub fn tiny() -> Self {
        Self {
            d: 16,
            l: 6,
            ..Self::default()
        }
    }

    /// Desk-scale configuration used by the end-to-end experiment.
    pub fn desk() -> Self {
        Self {
            d: 64,
            l: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), UpliftError> {
        if self.d == 0 || self.d % 2 != 0 || self.d % (2 * self.heads) != 0 {
            return Err(UpliftError::InvalidConfig(format!(
                "d = {} must be even and divisible by 2*heads",
                self.d
            )));
        }
        if self.l <= self.spin_blocks {
            return Err(UpliftError::InvalidConfig(format!(
                "l = {} must exceed spin_blocks = {}",
                self.l, self.spin_blocks
            )));
        }
        if self.embed_blocks == 0 || self.head_layers < 2 || self.mlp_ratio == 0 {
            return Err(UpliftError::InvalidConfig(
                "embed_blocks, head_layers and mlp_ratio must be positive".into(),
            ));
        }
        if !(self.delta_t > 0.0) || !(self.spin_scale > 0.0) {
            return Err(UpliftError::InvalidConfig(
                "delta_t and spin_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Rotary embedding configuration: the time quantum and per-pair angles
/// θ_m = 10000^(−2m/d).
#[derive(Debug, Clone, PartialEq)]
pub struct RopeConfig {
    pub delta_t: f64,
    thetas: Vec<f64>,
}

impl RopeConfig {
    pub fn new(d: usize, delta_t: f64) -> Self {
        assert!(d % 2 == 0, "feature dimension must be even");
        let thetas = (0..d / 2)
            .map(|m| 10000f64.powf(-2.0 * m as f64 / d as f64))
            .collect();
        Self { delta_t, thetas }
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    /// Quantized position index p = round(t / Δt).
    pub fn position(&self, t_s: f64) -> f64 {
        (t_s / self.delta_t).round()
    }
}

/// Rotates consecutive pairs of `x` by p·θ_m where p = round(t/Δt).
pub fn rope_rotate(x: &[f64], t_s: f64, cfg: &RopeConfig) -> Vec<f64> {
    assert_eq!(x.len(), cfg.thetas.len() * 2, "vector length must be d");
    let p = cfg.position(t_s);
    let mut out = vec![0.0; x.len()];
    for (m, theta) in cfg.thetas.iter().enumerate() {
        let angle = p * theta;
        let (s, c) = angle.sin_cos();
        let a = x[2 * m];
        let b = x[2 * m + 1];
        out[2 * m] = a * c - b * s;
        out[2 * m + 1] = a * s + b * c;
    }
    out
}

#[derive(Clone)]
struct BlockIds {
    ln1_g: ParamId,
    ln1_b: ParamId,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
    ff_w1: ParamId,
    ff_b1: ParamId,
    ff_w2: ParamId,
    ff_b2: ParamId,
}

#[derive(Clone)]
struct HeadIds {
    ln_g: ParamId,
    ln_b: ParamId,
    layers: Vec<(ParamId, ParamId)>,
}

#[derive(Clone)]
struct ModelIndex {
    embed_w1: ParamId,
    embed_b1: ParamId,
    embed_w2: ParamId,
    embed_b2: ParamId,
    /// Row 0: ball identity; rows 1..=13: keypoint identities.
    identities: ParamId,
    embed_blocks: Vec<BlockIds>,
    spin_token: ParamId,
    main_blocks: Vec<BlockIds>,
    traj_head: HeadIds,
    spin_head: HeadIds,
}

/// All learnable parameters plus the architecture configuration.
#[derive(Clone)]
pub struct UpliftModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    index: ModelIndex,
    rope: RopeConfig,
}

const INIT_STD: f64 = 0.02;

fn trunc_normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| loop {
        // Box-Muller, re-drawn outside ±2σ.
        let u1: f64 = rng.random::<f64>().max(1e-12);
        let u2: f64 = rng.random();
        let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        if z.abs() <= 2.0 {
            break z * std;
        }
    })
}

fn add_block(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, cfg: &ModelConfig) -> BlockIds {
    let d = cfg.d;
    let hidden = d * cfg.mlp_ratio;
    BlockIds {
        ln1_g: store.add(format!("{prefix}.ln1.gain"), Array2::ones((1, d))),
        ln1_b: store.add(format!("{prefix}.ln1.bias"), Array2::zeros((1, d))),
        wq: store.add(format!("{prefix}.attn.wq"), trunc_normal(rng, d, d, INIT_STD)),
        bq: store.add(format!("{prefix}.attn.bq"), Array2::zeros((1, d))),
        wk: store.add(format!("{prefix}.attn.wk"), trunc_normal(rng, d, d, INIT_STD)),
        bk: store.add(format!("{prefix}.attn.bk"), Array2::zeros((1, d))),
        wv: store.add(format!("{prefix}.attn.wv"), trunc_normal(rng, d, d, INIT_STD)),
        bv: store.add(format!("{prefix}.attn.bv"), Array2::zeros((1, d))),
        wo: store.add(format!("{prefix}.attn.wo"), trunc_normal(rng, d, d, INIT_STD)),
        bo: store.add(format!("{prefix}.attn.bo"), Array2::zeros((1, d))),
        ln2_g: store.add(format!("{prefix}.ln2.gain"), Array2::ones((1, d))),
        ln2_b: store.add(format!("{prefix}.ln2.bias"), Array2::zeros((1, d))),
        ff_w1: store.add(format!("{prefix}.ff.w1"), trunc_normal(rng, d, hidden, INIT_STD)),
        ff_b1: store.add(format!("{prefix}.ff.b1"), Array2::zeros((1, hidden))),
        ff_w2: store.add(format!("{prefix}.ff.w2"), trunc_normal(rng, hidden, d, INIT_STD)),
        ff_b2: store.add(format!("{prefix}.ff.b2"), Array2::zeros((1, d))),
    }
}

fn add_head(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, cfg: &ModelConfig) -> HeadIds {
    let d = cfg.d;
    let mut layers = Vec::with_capacity(cfg.head_layers);
    for i in 0..cfg.head_layers {
        let out = if i + 1 == cfg.head_layers { 3 } else { d };
        layers.push((
            store.add(format!("{prefix}.fc{i}.w"), trunc_normal(rng, d, out, INIT_STD)),
            store.add(format!("{prefix}.fc{i}.b"), Array2::zeros((1, out))),
        ));
    }
    HeadIds {
        ln_g: store.add(format!("{prefix}.ln.gain"), Array2::ones((1, d))),
        ln_b: store.add(format!("{prefix}.ln.bias"), Array2::zeros((1, d))),
        layers,
    }
}

impl UpliftModel {
    /// Builds a freshly initialized model (truncated-normal weights, zero
    /// biases). Deterministic in `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, UpliftError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d;

        // Fan-in scaled init for the input MLP: at the global 0.02 the
        // coordinate signal enters an order of magnitude below the identity
        // vectors and training stalls in a mean-predicting plateau.
        let embed_w1 = store.add(
            "embed.mlp.w1",
            trunc_normal(&mut rng, 2, d, (2.0f64 / 2.0).sqrt()),
        );
        let embed_b1 = store.add("embed.mlp.b1", Array2::zeros((1, d)));
        let embed_w2 = store.add(
            "embed.mlp.w2",
            trunc_normal(&mut rng, d, d, (2.0 / d as f64).sqrt()),
        );
        let embed_b2 = store.add("embed.mlp.b2", Array2::zeros((1, d)));
        let identities = store.add(
            "embed.identity",
            trunc_normal(&mut rng, 1 + crate::camera::NUM_KEYPOINTS, d, INIT_STD),
        );
        let embed_blocks = (0..config.embed_blocks)
            .map(|i| add_block(&mut store, &mut rng, &format!("embed.block{i}"), &config))
            .collect();
        let spin_token = store.add("spin_token", trunc_normal(&mut rng, 1, d, INIT_STD));
        let main_blocks = (0..config.l)
            .map(|i| add_block(&mut store, &mut rng, &format!("main.block{i}"), &config))
            .collect();
        let traj_head = add_head(&mut store, &mut rng, "head.traj", &config);
        let spin_head = add_head(&mut store, &mut rng, "head.spin", &config);

        Ok(Self {
            rope: RopeConfig::new(d, config.delta_t),
            config,
            params: store,
            index: ModelIndex {
                embed_w1,
                embed_b1,
                embed_w2,
                embed_b2,
                identities,
                embed_blocks,
                spin_token,
                main_blocks,
                traj_head,
                spin_head,
            },
        })
    }

    pub fn rope_config(&self) -> &RopeConfig {
        &self.rope
    }

    pub fn num_params(&self) -> usize {
        self.params.total_len()
    }

    fn block(
        &self,
        tape: &mut Tape,
        x: Var,
        ids: &BlockIds,
        groups: usize,
        rope: Option<(&Array2<f64>, &Array2<f64>)>,
    ) -> Var {
        let store = &self.params;
        let ln1_g = tape.param(store, ids.ln1_g);
        let ln1_b = tape.param(store, ids.ln1_b);
        let n1 = tape.layer_norm(x, ln1_g, ln1_b);

        let wq = tape.param(store, ids.wq);
        let bq = tape.param(store, ids.bq);
        let wk = tape.param(store, ids.wk);
        let bk = tape.param(store, ids.bk);
        let wv = tape.param(store, ids.wv);
        let bv = tape.param(store, ids.bv);
        let mut q = tape.matmul(n1, wq);
        q = tape.add_row(q, bq);
        let mut k = tape.matmul(n1, wk);
        k = tape.add_row(k, bk);
        let mut v = tape.matmul(n1, wv);
        v = tape.add_row(v, bv);
        if let Some((cos, sin)) = rope {
            q = tape.rope(q, cos.clone(), sin.clone());
            k = tape.rope(k, cos.clone(), sin.clone());
        }
        let attn = tape.attention(q, k, v, self.config.heads, groups);
        let wo = tape.param(store, ids.wo);
        let bo = tape.param(store, ids.bo);
        let mut o = tape.matmul(attn, wo);
        o = tape.add_row(o, bo);
        let x = tape.add(x, o);

        let ln2_g = tape.param(store, ids.ln2_g);
        let ln2_b = tape.param(store, ids.ln2_b);
        let n2 = tape.layer_norm(x, ln2_g, ln2_b);
        let w1 = tape.param(store, ids.ff_w1);
        let b1 = tape.param(store, ids.ff_b1);
        let w2 = tape.param(store, ids.ff_w2);
        let b2 = tape.param(store, ids.ff_b2);
        let mut f = tape.matmul(n2, w1);
        f = tape.add_row(f, b1);
        f = tape.silu(f);
        f = tape.matmul(f, w2);
        f = tape.add_row(f, b2);
        tape.add(x, f)
    }

    fn head(&self, tape: &mut Tape, x: Var, ids: &HeadIds) -> Var {
        let g = tape.param(&self.params, ids.ln_g);
        let b = tape.param(&self.params, ids.ln_b);
        let mut h = tape.layer_norm(x, g, b);
        for (i, (w, bias)) in ids.layers.iter().enumerate() {
            let wv = tape.param(&self.params, *w);
            let bv = tape.param(&self.params, *bias);
            h = tape.matmul(h, wv);
            h = tape.add_row(h, bv);
            if i + 1 < ids.layers.len() {
                h = tape.relu(h);
            }
        }
        h
    }

    /// Embedding stage over all frames at once: each frame forms a group of
    /// 1 + K tokens (ball first), attention stays within the frame, and the
    /// ball token of every frame is returned (N×d).
    fn embed_stage(
        &self,
        tape: &mut Tape,
        balls_norm: &[[f64; 2]],
        keypoints_norm: &[(usize, [f64; 2])],
    ) -> Result<Var, UpliftError> {
        for (idx, _) in keypoints_norm {
            if *idx >= crate::camera::NUM_KEYPOINTS {
                return Err(UpliftError::BadKeypointIndex(*idx));
            }
        }
        let n = balls_norm.len();
        let group = 1 + keypoints_norm.len();
        let mut coords = Array2::zeros((n * group, 2));
        let mut identity_rows = Vec::with_capacity(n * group);
        for (f, ball) in balls_norm.iter().enumerate() {
            let base = f * group;
            coords[(base, 0)] = ball[0];
            coords[(base, 1)] = ball[1];
            identity_rows.push(0);
            for (j, (idx, p)) in keypoints_norm.iter().enumerate() {
                coords[(base + 1 + j, 0)] = p[0];
                coords[(base + 1 + j, 1)] = p[1];
                identity_rows.push(1 + idx);
            }
        }

        let x = tape.constant(coords);
        let w1 = tape.param(&self.params, self.index.embed_w1);
        let b1 = tape.param(&self.params, self.index.embed_b1);
        let w2 = tape.param(&self.params, self.index.embed_w2);
        let b2 = tape.param(&self.params, self.index.embed_b2);
        let mut h = tape.matmul(x, w1);
        h = tape.add_row(h, b1);
        h = tape.relu(h);
        h = tape.matmul(h, w2);
        h = tape.add_row(h, b2);

        let ident = tape.param(&self.params, self.index.identities);
        let ident_rows = tape.gather_rows(ident, identity_rows);
        let mut tok = tape.add(h, ident_rows);

        for ids in &self.index.embed_blocks {
            tok = self.block(tape, tok, ids, n, None);
        }
        let ball_rows: Vec<usize> = (0..n).map(|f| f * group).collect();
        Ok(tape.gather_rows(tok, ball_rows))
    }

    fn rope_tables(&self, times_s: &[f64]) -> (Array2<f64>, Array2<f64>) {
        let half = self.config.d / 2;
        let rows = times_s.len() + 1;
        let mut cos = Array2::zeros((rows, half));
        let mut sin = Array2::zeros((rows, half));
        // Row 0 is the spin token: position 0, identity rotation.
        for m in 0..half {
            cos[(0, m)] = 1.0;
        }
        for (i, &t) in times_s.iter().enumerate() {
            let p = self.rope.position(t);
            for (m, theta) in self.rope.thetas.iter().enumerate() {
                let (s, c) = (p * theta).sin_cos();
                cos[(i + 1, m)] = c;
                sin[(i + 1, m)] = s;
            }
        }
        (cos, sin)
    }

    /// Builds the full forward graph; returns (trajectory N×3 in meters,
    /// raw spin head output 1×3 in units of `spin_scale`).
    fn build_graph(&self, tape: &mut Tape, input: &UpliftInput) -> Result<(Var, Var), UpliftError> {
        input.validate()?;
        let n = input.times_s.len();
        let loc = self.embed_stage(tape, &input.ball_norm, &input.keypoints_norm)?;
        let spin_tok = tape.param(&self.params, self.index.spin_token);
        let mut seq = tape.concat_rows(spin_tok, loc);

        let (cos, sin) = self.rope_tables(&input.times_s);
        let stage1 = self.config.l - self.config.spin_blocks;
        for ids in &self.index.main_blocks[..stage1] {
            seq = self.block(tape, seq, ids, 1, Some((&cos, &sin)));
        }
        let traj_tokens = tape.gather_rows(seq, (1..=n).collect());
        let traj = self.head(tape, traj_tokens, &self.index.traj_head);

        let mut seq2 = seq;
        for ids in &self.index.main_blocks[stage1..] {
            seq2 = self.block(tape, seq2, ids, 1, Some((&cos, &sin)));
        }
        let spin_token_out = tape.gather_rows(seq2, vec![0]);
        let spin_raw = self.head(tape, spin_token_out, &self.index.spin_head);
        Ok((traj, spin_raw))
    }

    /// Runs the network on a prepared input; returns per-frame 3D positions
    /// (m) and the initial spin (rad/s).
    pub fn forward(&self, input: &UpliftInput) -> Result<Prediction, UpliftError> {
        let mut tape = Tape::new();
        let (traj, spin_raw) = self.build_graph(&mut tape, input)?;
        let tv = tape.value(traj);
        let traj_out: Vec<[f64; 3]> = (0..tv.nrows())
            .map(|i| [tv[(i, 0)], tv[(i, 1)], tv[(i, 2)]])
            .collect();
        let sv = tape.value(spin_raw);
        let s = self.config.spin_scale;
        Ok(Prediction {
            traj: traj_out,
            spin_rad_s: [sv[(0, 0)] * s, sv[(0, 1)] * s, sv[(0, 2)] * s],
        })
    }

    /// Embeds a single frame and returns its location token.
    pub fn embed_frame(
        &self,
        ball_norm: [f64; 2],
        keypoints_norm: &[(usize, [f64; 2])],
    ) -> Result<Vec<f64>, UpliftError> {
        let mut tape = Tape::new();
        let loc = self.embed_stage(&mut tape, &[ball_norm], keypoints_norm)?;
        Ok(tape.value(loc).row(0).to_vec())
    }

    /// Loss and parameter gradients for one sample.
    pub fn loss_and_grads(
        &self,
        input: &UpliftInput,
        target: &Prediction,
        lambda_traj: f64,
        lambda_spin: f64,
    ) -> Result<(f64, ParamGrads), UpliftError> {
        let mut tape = Tape::new();
        let root = self.loss_graph(&mut tape, input, target, lambda_traj, lambda_spin)?;
        let mut grads = ParamGrads::zeros_like(&self.params);
        tape.backward(root, &mut grads);
        Ok((tape.scalar(root), grads))
    }

    /// Loss only (no gradients); used by the finite-difference check.
    pub fn loss_value(
        &self,
        input: &UpliftInput,
        target: &Prediction,
        lambda_traj: f64,
        lambda_spin: f64,
    ) -> Result<f64, UpliftError> {
        let mut tape = Tape::new();
        let root = self.loss_graph(&mut tape, input, target, lambda_traj, lambda_spin)?;
        Ok(tape.scalar(root))
    }

    fn loss_graph(
        &self,
        tape: &mut Tape,
        input: &UpliftInput,
        target: &Prediction,
        lambda_traj: f64,
        lambda_spin: f64,
    ) -> Result<Var, UpliftError> {
        let n = input.times_s.len();
        if target.traj.len() != n {
            return Err(UpliftError::LengthMismatch(target.traj.len(), n));
        }
        let (traj, spin_raw) = self.build_graph(tape, input)?;
        let traj_target =
            Array2::from_shape_fn((n, 3), |(i, j)| target.traj[i][j]);
        let traj_ss = tape.sum_sq_diff(traj, traj_target);
        let s = self.config.spin_scale;
        let spin_target =
            Array2::from_shape_fn((1, 3), |(_, j)| target.spin_rad_s[j] / s);
        let spin_ss = tape.sum_sq_diff(spin_raw, spin_target);
        Ok(tape.add_scaled(traj_ss, spin_ss, lambda_traj / n as f64, lambda_spin))
    }
}

/// Model inputs: one entry per valid frame plus the available keypoints,
/// with pixel coordinates normalized by the image width.
#[derive(Debug, Clone, PartialEq)]
pub struct UpliftInput {
    pub times_s: Vec<f64>,
    pub ball_norm: Vec<[f64; 2]>,
    pub keypoints_norm: Vec<(usize, [f64; 2])>,
}

impl UpliftInput {
    /// Extracts the valid frames and available keypoints of a sample,
    /// normalizing pixel coordinates by the image width.
    pub fn from_sample(sample: &SynthSample) -> Result<Self, UpliftError> {
        let w = sample.image_w as f64;
        let mut times_s = Vec::new();
        let mut ball_norm = Vec::new();
        for i in 0..sample.times_s.len() {
            if sample.ball_valid[i] {
                let p = sample.ball2d_px[i].expect("valid frame carries a detection");
                times_s.push(sample.times_s[i]);
                ball_norm.push([p[0] / w, p[1] / w]);
            }
        }
        let keypoints_norm = sample
            .keypoint_set()
            .available()
            .map(|(i, p)| (i, [p[0] / w, p[1] / w]))
            .collect();
        let input = Self {
            times_s,
            ball_norm,
            keypoints_norm,
        };
        input.validate()?;
        Ok(input)
    }

    pub fn validate(&self) -> Result<(), UpliftError> {
        if self.times_s.len() < 2 {
            return Err(UpliftError::TooFewFrames(self.times_s.len()));
        }
        if self.times_s.len() != self.ball_norm.len() {
            return Err(UpliftError::LengthMismatch(
                self.times_s.len(),
                self.ball_norm.len(),
            ));
        }
        for i in 1..self.times_s.len() {
            if self.times_s[i] <= self.times_s[i - 1] {
                return Err(UpliftError::BadTimestamps(i));
            }
        }
        Ok(())
    }
}

/// Network output (also used for training targets).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub traj: Vec<[f64; 3]>,
    pub spin_rad_s: [f64; 3],
}

/// Training loss: λ_traj · mean-over-frames of the squared 3D position
/// error plus λ_spin · squared spin error after normalizing spin by
/// [`SPIN_NORM_RAD_S`].
pub fn loss(
    pred: &Prediction,
    truth: &Prediction,
    lambda_traj: f64,
    lambda_spin: f64,
) -> Result<f64, UpliftError> {
    if pred.traj.len() != truth.traj.len() {
        return Err(UpliftError::LengthMismatch(
            pred.traj.len(),
            truth.traj.len(),
        ));
    }
    if pred.traj.is_empty() {
        return Err(UpliftError::TooFewFrames(0));
    }
    let n = pred.traj.len() as f64;
    let traj_term: f64 = pred
        .traj
        .iter()
        .zip(&truth.traj)
        .map(|(p, t)| {
            (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) + (p[2] - t[2]).powi(2)
        })
        .sum::<f64>()
        / n;
    let spin_term: f64 = (0..3)
        .map(|i| ((pred.spin_rad_s[i] - truth.spin_rad_s[i]) / SPIN_NORM_RAD_S).powi(2))
        .sum();
    Ok(lambda_traj * traj_term + lambda_spin * spin_term)
}

/// Compares reverse-mode gradients against central finite differences on a
/// random subsample of parameter coordinates; returns the maximum scaled
/// relative error.
pub fn grad_check(
    model: &UpliftModel,
    input: &UpliftInput,
    target: &Prediction,
    epsilon: f64,
    n_coords: usize,
    seed: u64,
) -> Result<f64, UpliftError> {
    assert!(epsilon > 0.0);
    let (_, grads) = model.loss_and_grads(input, target, 1.0, 1.0)?;

    // Flattened coordinate space across all tensors.
    let mut offsets = Vec::with_capacity(model.params.len());
    let mut total = 0usize;
    for i in 0..model.params.len() {
        offsets.push(total);
        total += model.params.get(ParamId(i)).len();
    }
    let n_coords = n_coords.min(total);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = rand::seq::index::sample(&mut rng, total, n_coords);

    let mut probe = model.clone();

    let mut max_err = 0.0f64;
    for flat in chosen.iter() {
        let slot = match offsets.binary_search(&flat) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let inner = flat - offsets[slot];
        let cols = probe.params.get(ParamId(slot)).ncols();
        let (r, c) = (inner / cols, inner % cols);

        let orig = probe.params.get(ParamId(slot))[(r, c)];
        probe.params.get_mut(ParamId(slot))[(r, c)] = orig + epsilon;
        let fp = probe.loss_value(input, target, 1.0, 1.0)?;
        probe.params.get_mut(ParamId(slot))[(r, c)] = orig - epsilon;
        let fm = probe.loss_value(input, target, 1.0, 1.0)?;
        probe.params.get_mut(ParamId(slot))[(r, c)] = orig;

        let fd = (fp - fm) / (2.0 * epsilon);
        let ad = grads.tensors[slot][(r, c)];
        let denom = ad.abs().max(fd.abs()).max(1e-6);
        max_err = max_err.max((ad - fd).abs() / denom);
    }
    Ok(max_err)
}
