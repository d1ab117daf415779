//! Evaluation measures: ACC@Xpx, 2D reprojection error, binary spin
//! classification with accuracy/macro-F1, and evaluation-time robustness
//! transforms.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::SynthSample;
use crate::camera::{project, CameraError, CameraModel};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("initial velocity has no horizontal component; ball frame undefined")]
    UndefinedFrame,
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Binary spin label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpinClass {
    Topspin,
    Backspin,
}

impl std::fmt::Display for SpinClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SpinClass::Topspin => "topspin",
            SpinClass::Backspin => "backspin",
        })
    }
}

/// Fraction of predictions within `x_px` of the truth (boundary inclusive).
pub fn acc_at_px(
    preds: &[[f64; 2]],
    truths: &[[f64; 2]],
    x_px: f64,
) -> Result<f64, MetricsError> {
    if preds.len() != truths.len() {
        return Err(MetricsError::LengthMismatch(preds.len(), truths.len()));
    }
    if preds.is_empty() {
        return Err(MetricsError::Empty);
    }
    let hits = preds
        .iter()
        .zip(truths)
        .filter(|(p, t)| {
            let d = ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt();
            d <= x_px
        })
        .count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean 2D reprojection error of a predicted 3D trajectory (px): the mean
/// over frames of the distance between the reprojected prediction and the
/// ground-truth 2D position. The dataset-level score is the mean of this
/// value over trajectories.
pub fn m2dre(
    pred_traj: &[[f64; 3]],
    camera: &CameraModel,
    truth2d: &[[f64; 2]],
) -> Result<f64, MetricsError> {
    if pred_traj.len() != truth2d.len() {
        return Err(MetricsError::LengthMismatch(pred_traj.len(), truth2d.len()));
    }
    if pred_traj.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut total = 0.0;
    for (p, t) in pred_traj.iter().zip(truth2d) {
        let px = project(camera, Vector3::new(p[0], p[1], p[2]))?;
        total += ((px[0] - t[0]).powi(2) + (px[1] - t[1]).powi(2)).sqrt();
    }
    Ok(total / pred_traj.len() as f64)
}

/// Classifies a world-frame spin vector as topspin or backspin relative to
/// the travel direction.
///
/// The local ball frame has x̂ along the horizontal projection of `v0`,
/// ẑ = world up and ŷ = ẑ × x̂; the label is topspin iff the spin's ŷ
/// component is strictly positive.
pub fn spin_class(
    spin_world: [f64; 3],
    v0_world: [f64; 3],
) -> Result<SpinClass, MetricsError> {
    let horiz = Vector3::new(v0_world[0], v0_world[1], 0.0);
    if horiz.norm() < 1e-12 {
        return Err(MetricsError::UndefinedFrame);
    }
    let x_loc = horiz.normalize();
    let y_loc = Vector3::z().cross(&x_loc);
    let spin = Vector3::new(spin_world[0], spin_world[1], spin_world[2]);
    if spin.dot(&y_loc) > 0.0 {
        Ok(SpinClass::Topspin)
    } else {
        Ok(SpinClass::Backspin)
    }
}

/// Accuracy and macro F1 for binary spin labels.
///
/// Per class F1 = 2·tp / (2·tp + fp + fn); a class absent from both truth
/// and prediction contributes 1, and a class with zero precision and recall
/// contributes 0. Macro F1 is the unweighted mean over the two classes.
pub fn classification_scores(
    truths: &[SpinClass],
    preds: &[SpinClass],
) -> Result<(f64, f64), MetricsError> {
    if truths.len() != preds.len() {
        return Err(MetricsError::LengthMismatch(truths.len(), preds.len()));
    }
    if truths.is_empty() {
        return Err(MetricsError::Empty);
    }
    let accuracy = truths
        .iter()
        .zip(preds)
        .filter(|(t, p)| t == p)
        .count() as f64
        / truths.len() as f64;

    let f1_for = |class: SpinClass| -> f64 {
        let tp = truths
            .iter()
            .zip(preds)
            .filter(|(t, p)| **t == class && **p == class)
            .count() as f64;
        let fp = truths
            .iter()
            .zip(preds)
            .filter(|(t, p)| **t != class && **p == class)
            .count() as f64;
        let fnn = truths
            .iter()
            .zip(preds)
            .filter(|(t, p)| **t == class && **p != class)
            .count() as f64;
        if tp + fp + fnn == 0.0 {
            1.0
        } else {
            2.0 * tp / (2.0 * tp + fp + fnn)
        }
    };
    let macro_f1 = 0.5 * (f1_for(SpinClass::Topspin) + f1_for(SpinClass::Backspin));
    Ok((accuracy, macro_f1))
}

/// Evaluation-time robustness transform kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalTransformKind {
    /// Invalidates every second frame starting from index 1.
    HalfFps,
    /// Invalidates each frame and drops each keypoint independently at the
    /// configured probabilities.
    MissingDetections,
}

/// Configuration of an evaluation-time transform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalTransform {
    pub kind: EvalTransformKind,
    pub frame_drop_prob: f64,
    pub keypoint_drop_prob: f64,
    pub seed: u64,
}

impl EvalTransform {
    pub fn half_fps() -> Self {
        Self {
            kind: EvalTransformKind::HalfFps,
            frame_drop_prob: 0.0,
            keypoint_drop_prob: 0.0,
            seed: 0,
        }
    }

    pub fn missing_detections(seed: u64) -> Self {
        Self {
            kind: EvalTransformKind::MissingDetections,
            frame_drop_prob: 0.10,
            keypoint_drop_prob: 0.10,
            seed,
        }
    }
}

/// Applies a robustness transform; invalidated frames keep their timestamps
/// with `ball_valid = false`. Always leaves at least 2 valid frames
/// (re-drawing the random masks when necessary).
pub fn apply_eval_transform(sample: &SynthSample, t: &EvalTransform) -> SynthSample {
    let mut out = sample.clone();
    match t.kind {
        EvalTransformKind::HalfFps => {
            for i in (1..out.ball_valid.len()).step_by(2) {
                out.ball_valid[i] = false;
                out.ball2d_px[i] = None;
            }
        }
        EvalTransformKind::MissingDetections => {
            let mut rng = ChaCha8Rng::seed_from_u64(t.seed);
            loop {
                let mut ball_valid = sample.ball_valid.clone();
                let mut ball2d = sample.ball2d_px.clone();
                for i in 0..ball_valid.len() {
                    if ball_valid[i] && rng.random::<f64>() < t.frame_drop_prob {
                        ball_valid[i] = false;
                        ball2d[i] = None;
                    }
                }
                let mut kp_valid = sample.keypoints_valid.clone();
                let mut kp = sample.keypoints2d_px.clone();
                for i in 0..kp_valid.len() {
                    if kp_valid[i] && rng.random::<f64>() < t.keypoint_drop_prob {
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
        }
    }
    out
}
