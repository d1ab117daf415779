//! Training loop for the uplifting network: frame-rate and dropout
//! augmentation, Adam with warmup + cosine decay, per-epoch validation and
//! the F1/m2DRE model selection rule. All randomness derives from the
//! config seed, so runs are exactly reproducible and resumable.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::{derive_seed, simulate_trajectory, BallState, PhysicsParams, SynthSample};
use crate::camera::project;
use crate::metrics::{classification_scores, m2dre, spin_class, SpinClass};
use crate::uplift::tape::{ParamGrads, ParamId};
use crate::uplift::{Checkpoint, Prediction, UpliftError, UpliftInput, UpliftModel};

use nalgebra::Vector3;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training diverged at step {step} (loss {loss}); history attached")]
    Diverged {
        step: u64,
        loss: f64,
        history: TrainHistory,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Uplift(#[from] UpliftError),
    #[error("checkpoint does not contain training state: {0}")]
    BadResume(String),
}

/// Training hyperparameters and augmentation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Probability of invalidating each ball detection during augmentation.
    pub drop_prob_ball: f64,
    /// Probability of dropping each table keypoint during augmentation.
    pub drop_prob_keypoint: f64,
    pub fps_min: f64,
    pub fps_max: f64,
    pub lambda_traj: f64,
    pub lambda_spin: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub warmup_steps: u64,
    /// Final learning-rate fraction of the cosine schedule.
    pub lr_final_frac: f64,
    /// Validate every this many epochs (the last epoch always validates).
    pub val_every: usize,
    /// Physics used to re-simulate trajectories at resampled frame rates;
    /// must match the generator settings of the dataset.
    pub physics: PhysicsParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 64,
            epochs: 10,
            seed: 0,
            drop_prob_ball: 0.05,
            drop_prob_keypoint: 0.05,
            fps_min: 20.0,
            fps_max: 60.0,
            lambda_traj: 1.0,
            lambda_spin: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            grad_clip: 1.0,
            warmup_steps: 200,
            lr_final_frac: 0.05,
            val_every: 1,
            physics: PhysicsParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..1.0).contains(&self.drop_prob_ball)
            || !(0.0..1.0).contains(&self.drop_prob_keypoint)
        {
            return Err(TrainError::InvalidConfig(
                "drop probabilities must be in [0, 1)".into(),
            ));
        }
        if !(self.fps_min > 0.0 && self.fps_min <= self.fps_max) {
            return Err(TrainError::InvalidConfig(
                "fps range must satisfy 0 < fps_min <= fps_max".into(),
            ));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::InvalidConfig(
                "batch_size and epochs must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if self.val_every == 0 {
            return Err(TrainError::InvalidConfig("val_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: Option<f64>,
    pub val_m2dre: Option<f64>,
}

/// Full training history plus the selected epoch.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// Selection rule: among validated epochs attaining the maximum F1,
    /// pick the one with the lowest m2DRE (earliest on further ties).
    pub fn select_best(&self) -> Option<usize> {
        let mut best: Option<(usize, f64, f64)> = None;
        for row in &self.epochs {
            let (Some(f1), Some(m)) = (row.val_f1, row.val_m2dre) else {
                continue;
            };
            let better = match best {
                None => true,
                Some((_, bf, bm)) => f1 > bf || (f1 == bf && m < bm),
            };
            if better {
                best = Some((row.epoch, f1, m));
            }
        }
        best.map(|(e, _, _)| e)
    }

    /// CSV rendering: `epoch,loss,f1,m2dre` with empty cells for epochs
    /// without validation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,f1,m2dre\n");
        for r in &self.epochs {
            let f1 = r.val_f1.map(|v| v.to_string()).unwrap_or_default();
            let m = r.val_m2dre.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, f1, m));
        }
        out
    }
}

/// Re-simulates a sample at a frame rate drawn from `[fps_min, fps_max]`,
/// then randomly invalidates ball frames and drops keypoints. Always leaves
/// at least 2 valid frames. With zero drop probabilities and a degenerate
/// fps range equal to the sample's nominal rate, the sample is returned
/// unchanged.
pub fn augment_sample<R: Rng>(
    sample: &SynthSample,
    rng: &mut R,
    cfg: &TrainConfig,
) -> SynthSample {
    let identity_fps =
        cfg.fps_min == cfg.fps_max && (cfg.fps_min - sample.fps).abs() < 1e-9;
    if identity_fps && cfg.drop_prob_ball == 0.0 && cfg.drop_prob_keypoint == 0.0 {
        return sample.clone();
    }

    let mut out = sample.clone();
    if !identity_fps {
        let duration = *sample.times_s.last().expect("validated sample");
        let camera = sample.camera();
        let init = BallState::new(
            Vector3::new(
                sample.truth_r3d_m[0][0],
                sample.truth_r3d_m[0][1],
                sample.truth_r3d_m[0][2],
            ),
            Vector3::new(
                sample.init_v_m_s[0],
                sample.init_v_m_s[1],
                sample.init_v_m_s[2],
            ),
            Vector3::new(
                sample.truth_spin_rad_s[0],
                sample.truth_spin_rad_s[1],
                sample.truth_spin_rad_s[2],
            ),
        );
        // The resampled grid spans the same window, so the re-simulated path
        // retraces the stored trajectory exactly.
        for _ in 0..10 {
            let fps = cfg.fps_min + (cfg.fps_max - cfg.fps_min) * rng.random::<f64>();
            let n = ((duration * fps + 1e-9).floor() as usize).max(1);
            let times: Vec<f64> = (0..=n).map(|i| i as f64 / fps).collect();
            let Ok(states) = simulate_trajectory(&init, &cfg.physics, &times) else {
                continue;
            };
            if states.len() != times.len() {
                continue;
            }
            let mut ball2d = Vec::with_capacity(states.len());
            let mut ok = true;
            for s in &states {
                match project(&camera, s.r) {
                    Ok(px) => ball2d.push(Some(px)),
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            out.truth_r3d_m = states.iter().map(|s| [s.r.x, s.r.y, s.r.z]).collect();
            out.ball_valid = vec![true; states.len()];
            out.ball2d_px = ball2d;
            out.times_s = times;
            out.fps = fps;
            break;
        }
    }

    // Random drops, re-drawn until at least 2 valid frames remain.
    loop {
        let mut ball_valid = out.ball_valid.clone();
        let mut ball2d = out.ball2d_px.clone();
        for i in 0..ball_valid.len() {
            if ball_valid[i] && rng.random::<f64>() < cfg.drop_prob_ball {
                ball_valid[i] = false;
                ball2d[i] = None;
            }
        }
        let mut kp_valid = out.keypoints_valid.clone();
        let mut kp = out.keypoints2d_px.clone();
        for i in 0..kp_valid.len() {
            if kp_valid[i] && rng.random::<f64>() < cfg.drop_prob_keypoint {
                kp_valid[i] = false;
                kp[i] = None;
            }
        }
        if ball_valid.iter().filter(|&&v| v).count() >= 2 {
            out.ball_valid = ball_valid;
            out.ball2d_px = ball2d;
            out.keypoints_valid = kp_valid;
            out.keypoints2d_px = kp;
            break;
        }
    }
    out
}

/// Network input plus matching ground truth restricted to the valid frames.
pub fn input_and_target(sample: &SynthSample) -> Result<(UpliftInput, Prediction), UpliftError> {
    let input = UpliftInput::from_sample(sample)?;
    let traj = sample
        .truth_r3d_m
        .iter()
        .zip(&sample.ball_valid)
        .filter(|(_, &v)| v)
        .map(|(r, _)| *r)
        .collect();
    Ok((
        input,
        Prediction {
            traj,
            spin_rad_s: sample.truth_spin_rad_s,
        },
    ))
}

/// Aggregate validation result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub n_trajectories: usize,
    pub spin_accuracy: f64,
    pub spin_macro_f1: f64,
    pub m2dre_px: f64,
}

/// Evaluates a model on clean samples: spin classification against the
/// ground-truth label and mean reprojection error of the predicted 3D
/// trajectory over the valid frames.
pub fn evaluate_model(
    model: &UpliftModel,
    samples: &[SynthSample],
) -> Result<EvalSummary, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let per_sample: Vec<Result<(SpinClass, SpinClass, f64), TrainError>> = samples
        .par_iter()
        .map(|s| {
            let (input, target) = input_and_target(s)?;
            let pred = model.forward(&input)?;
            let truth_class = spin_class(target.spin_rad_s, s.init_v_m_s)
                .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
            let pred_class = spin_class(pred.spin_rad_s, s.init_v_m_s)
                .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
            let truth2d: Vec<[f64; 2]> = s
                .ball2d_px
                .iter()
                .zip(&s.ball_valid)
                .filter(|(_, &v)| v)
                .map(|(p, _)| p.expect("valid frame"))
                .collect();
            let reproj = m2dre(&pred.traj, &s.camera(), &truth2d)
                .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
            Ok((truth_class, pred_class, reproj))
        })
        .collect();

    let mut truths = Vec::with_capacity(samples.len());
    let mut preds = Vec::with_capacity(samples.len());
    let mut reproj_sum = 0.0;
    for r in per_sample {
        let (t, p, m) = r?;
        truths.push(t);
        preds.push(p);
        reproj_sum += m;
    }
    let (acc, f1) = classification_scores(&truths, &preds)
        .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
    Ok(EvalSummary {
        n_trajectories: samples.len(),
        spin_accuracy: acc,
        spin_macro_f1: f1,
        m2dre_px: reproj_sum / samples.len() as f64,
    })
}

/// Incremental trainer with Adam state; supports exact checkpoint/resume.
pub struct Trainer {
    pub model: UpliftModel,
    pub cfg: TrainConfig,
    pub history: TrainHistory,
    pub next_epoch: usize,
    pub step: u64,
    total_steps: u64,
    adam_m: Vec<Array2<f64>>,
    adam_v: Vec<Array2<f64>>,
    best: Option<BestSnapshot>,
}

struct BestSnapshot {
    epoch: usize,
    f1: f64,
    m2dre: f64,
    model: UpliftModel,
}

impl Trainer {
    pub fn new(model: UpliftModel, cfg: TrainConfig, n_train: usize) -> Result<Self, TrainError> {
        cfg.validate()?;
        if n_train == 0 {
            return Err(TrainError::EmptyDataset);
        }
        let steps_per_epoch = n_train.div_ceil(cfg.batch_size) as u64;
        let adam_m = (0..model.params.len())
            .map(|i| Array2::zeros(model.params.get(ParamId(i)).dim()))
            .collect();
        let adam_v = (0..model.params.len())
            .map(|i| Array2::zeros(model.params.get(ParamId(i)).dim()))
            .collect();
        Ok(Self {
            model,
            history: TrainHistory::default(),
            next_epoch: 0,
            step: 0,
            total_steps: steps_per_epoch * cfg.epochs as u64,
            adam_m,
            adam_v,
            best: None,
            cfg,
        })
    }

    fn lr_at(&self, step: u64) -> f64 {
        let base = self.cfg.learning_rate;
        if step < self.cfg.warmup_steps {
            return base * (step + 1) as f64 / self.cfg.warmup_steps as f64;
        }
        let total = self.total_steps.max(self.cfg.warmup_steps + 1);
        let progress =
            (step - self.cfg.warmup_steps) as f64 / (total - self.cfg.warmup_steps) as f64;
        let progress = progress.clamp(0.0, 1.0);
        let floor = self.cfg.lr_final_frac;
        base * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
    }

    /// One pass over the training set; returns the mean sample loss.
    pub fn run_epoch(&mut self, train_set: &[SynthSample]) -> Result<f64, TrainError> {
        if train_set.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let epoch = self.next_epoch;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed ^ SHUFFLE_STREAM, epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        let mut n_samples = 0usize;
        for batch in order.chunks(self.cfg.batch_size) {
            let results: Vec<Result<(f64, ParamGrads), TrainError>> = batch
                .par_iter()
                .map(|&idx| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(
                        derive_seed(self.cfg.seed ^ AUGMENT_STREAM, epoch as u64),
                        idx as u64,
                    ));
                    let aug = augment_sample(&train_set[idx], &mut rng, &self.cfg);
                    let (input, target) = input_and_target(&aug)?;
                    let out = self.model.loss_and_grads(
                        &input,
                        &target,
                        self.cfg.lambda_traj,
                        self.cfg.lambda_spin,
                    )?;
                    Ok(out)
                })
                .collect();

            // Fixed-order reduction keeps the update bit-deterministic.
            let mut total: Option<ParamGrads> = None;
            let mut batch_loss = 0.0;
            for r in results {
                let (l, g) = r?;
                batch_loss += l;
                match &mut total {
                    Some(t) => t.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            let mut grads = total.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            grads.scale(inv);
            batch_loss *= inv;

            if !batch_loss.is_finite() {
                return Err(TrainError::Diverged {
                    step: self.step,
                    loss: batch_loss,
                    history: self.history.clone(),
                });
            }

            if self.cfg.grad_clip > 0.0 {
                let norm = grads.global_norm();
                if norm > self.cfg.grad_clip {
                    grads.scale(self.cfg.grad_clip / norm);
                }
            }
            self.adam_step(&grads);
            loss_sum += batch_loss * batch.len() as f64;
            n_samples += batch.len();
        }
        self.next_epoch += 1;
        Ok(loss_sum / n_samples as f64)
    }

    fn adam_step(&mut self, grads: &ParamGrads) {
        let lr = self.lr_at(self.step);
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.cfg.beta1, self.cfg.beta2, self.cfg.adam_eps);
        let bc1 = 1.0 - b1.powi(t);
        let bc2 = 1.0 - b2.powi(t);
        for slot in 0..grads.tensors.len() {
            let g = &grads.tensors[slot];
            let m = &mut self.adam_m[slot];
            let v = &mut self.adam_v[slot];
            let p = self.model.params.get_mut(ParamId(slot));
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }

    /// Records an epoch row and refreshes the best-model snapshot.
    pub fn record_epoch(&mut self, stats: EpochStats) {
        if let (Some(f1), Some(m)) = (stats.val_f1, stats.val_m2dre) {
            let better = match &self.best {
                None => true,
                Some(b) => f1 > b.f1 || (f1 == b.f1 && m < b.m2dre),
            };
            if better {
                self.best = Some(BestSnapshot {
                    epoch: stats.epoch,
                    f1,
                    m2dre: m,
                    model: self.model.clone(),
                });
            }
        }
        self.history.epochs.push(stats);
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|b| b.epoch)
    }

    /// The selected model (best validated epoch, or the current weights when
    /// no validation ran).
    pub fn best_model(&self) -> &UpliftModel {
        self.best.as_ref().map(|b| &b.model).unwrap_or(&self.model)
    }

    /// Serializes model, optimizer state and history for exact resumption.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = serde_json::json!({
            "trainer": {
                "step": self.step,
                "next_epoch": self.next_epoch,
                "total_steps": self.total_steps,
                "history": self.history,
                "best": self.best.as_ref().map(|b| {
                    serde_json::json!({"epoch": b.epoch, "f1": b.f1, "m2dre": b.m2dre})
                }),
                "config": self.cfg,
            }
        });
        let mut ckpt = self.model.to_checkpoint(meta);
        for (i, m) in self.adam_m.iter().enumerate() {
            let name = self.model.params.name(ParamId(i)).to_string();
            ckpt.tensors.push((format!("adam.m.{name}"), m.clone()));
        }
        for (i, v) in self.adam_v.iter().enumerate() {
            let name = self.model.params.name(ParamId(i)).to_string();
            ckpt.tensors.push((format!("adam.v.{name}"), v.clone()));
        }
        if let Some(b) = &self.best {
            for (name, t) in b.model.params.iter() {
                ckpt.tensors.push((format!("best.{name}"), t.clone()));
            }
        }
        ckpt
    }

    /// Restores a trainer from a checkpoint produced by
    /// [`Trainer::to_checkpoint`]. The learning-rate schedule is derived
    /// from the current config and training-set size, so resuming with the
    /// same settings reproduces a continuous run exactly.
    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        cfg: TrainConfig,
        n_train: usize,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        if n_train == 0 {
            return Err(TrainError::EmptyDataset);
        }
        let model = UpliftModel::from_checkpoint(ckpt)
            .map_err(|e| TrainError::BadResume(e.to_string()))?;
        let state = ckpt
            .meta
            .get("trainer")
            .ok_or_else(|| TrainError::BadResume("missing trainer metadata".into()))?;
        let step = state["step"]
            .as_u64()
            .ok_or_else(|| TrainError::BadResume("missing step".into()))?;
        let next_epoch = state["next_epoch"]
            .as_u64()
            .ok_or_else(|| TrainError::BadResume("missing next_epoch".into()))?
            as usize;
        let total_steps = n_train.div_ceil(cfg.batch_size) as u64 * cfg.epochs as u64;
        let history: TrainHistory = serde_json::from_value(state["history"].clone())
            .map_err(|e| TrainError::BadResume(e.to_string()))?;

        let mut adam_m = Vec::with_capacity(model.params.len());
        let mut adam_v = Vec::with_capacity(model.params.len());
        for i in 0..model.params.len() {
            let name = model.params.name(ParamId(i)).to_string();
            let m = ckpt
                .tensor(&format!("adam.m.{name}"))
                .ok_or_else(|| TrainError::BadResume(format!("missing adam.m.{name}")))?;
            let v = ckpt
                .tensor(&format!("adam.v.{name}"))
                .ok_or_else(|| TrainError::BadResume(format!("missing adam.v.{name}")))?;
            adam_m.push(m.clone());
            adam_v.push(v.clone());
        }
        let best = match state.get("best") {
            Some(b) if !b.is_null() => {
                let mut best_model = model.clone();
                for i in 0..best_model.params.len() {
                    let name = best_model.params.name(ParamId(i)).to_string();
                    let t = ckpt
                        .tensor(&format!("best.{name}"))
                        .ok_or_else(|| TrainError::BadResume(format!("missing best.{name}")))?;
                    best_model.params.get_mut(ParamId(i)).assign(t);
                }
                Some(BestSnapshot {
                    epoch: b["epoch"].as_u64().unwrap_or(0) as usize,
                    f1: b["f1"].as_f64().unwrap_or(0.0),
                    m2dre: b["m2dre"].as_f64().unwrap_or(f64::INFINITY),
                    model: best_model,
                })
            }
            _ => None,
        };
        Ok(Self {
            model,
            cfg,
            history,
            next_epoch,
            step,
            total_steps,
            adam_m,
            adam_v,
            best,
        })
    }
}

/// Trains with per-epoch validation and returns the selected model plus the
/// history. Deterministic given the config seed.
pub fn train(
    model: &UpliftModel,
    train_set: &[SynthSample],
    val_set: &[SynthSample],
    cfg: &TrainConfig,
) -> Result<(UpliftModel, TrainHistory), TrainError> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut trainer = Trainer::new(model.clone(), *cfg, train_set.len())?;
    for epoch in 0..cfg.epochs {
        let loss = trainer.run_epoch(train_set)?;
        let validate = epoch % cfg.val_every == 0 || epoch + 1 == cfg.epochs;
        let (f1, m) = if validate {
            let summary = evaluate_model(&trainer.model, val_set)?;
            (Some(summary.spin_macro_f1), Some(summary.m2dre_px))
        } else {
            (None, None)
        };
        trainer.record_epoch(EpochStats {
            epoch,
            train_loss: loss,
            val_f1: f1,
            val_m2dre: m,
        });
    }
    let best = trainer.best_model().clone();
    Ok((best, trainer.history))
}

// Stream tags keep the shuffle and augmentation RNG streams disjoint.
const SHUFFLE_STREAM: u64 = 0x53_48_55_46_46_4C_45_00;
const AUGMENT_STREAM: u64 = 0x41_55_47_4D_45_4E_54_00;
