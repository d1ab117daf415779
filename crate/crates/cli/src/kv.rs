//! Flat key=value configuration: defaults < config file < --set flags.
//! Unknown keys are rejected by name.

use std::path::Path;

use ttlift::ballistics::{Range, ScenarioConfig};
use ttlift::training::TrainConfig;
use ttlift::uplift::ModelConfig;

use crate::util::CliError;

/// Parses a config file (one key=value per line, `#` comments) followed by
/// inline overrides, applying each pair through `apply`.
pub fn apply_layers<F>(
    config: Option<&Path>,
    sets: &[String],
    mut apply: F,
) -> Result<(), CliError>
where
    F: FnMut(&str, &str) -> Result<(), CliError>,
{
    if let Some(path) = config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = split_pair(line)
                .ok_or_else(|| CliError::Config(format!("line {}: expected key=value", lineno + 1)))?;
            apply(k, v)?;
        }
    }
    for s in sets {
        let (k, v) = split_pair(s)
            .ok_or_else(|| CliError::Config(format!("expected key=value, got '{s}'")))?;
        apply(k, v)?;
    }
    Ok(())
}

fn split_pair(s: &str) -> Option<(&str, &str)> {
    let (k, v) = s.split_once('=')?;
    let k = k.trim();
    let v = v.trim();
    (!k.is_empty()).then_some((k, v))
}

fn parse_f64(key: &str, v: &str) -> Result<f64, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(format!("key '{key}': '{v}' is not a number")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(format!("key '{key}': '{v}' is not an integer")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64, CliError> {
    v.parse()
        .map_err(|_| CliError::Config(format!("key '{key}': '{v}' is not an integer")))
}

/// Applies one scenario-generation override. Range keys come in `_min` /
/// `_max` pairs.
pub fn apply_scenario_key(cfg: &mut ScenarioConfig, key: &str, v: &str) -> Result<(), CliError> {
    fn set(r: &mut Range, lo: bool, x: f64) {
        if lo {
            r.lo = x;
        } else {
            r.hi = x;
        }
    }
    match key {
        "fps_min" => set(&mut cfg.fps_hz, true, parse_f64(key, v)?),
        "fps_max" => set(&mut cfg.fps_hz, false, parse_f64(key, v)?),
        "duration_min" => set(&mut cfg.duration_s, true, parse_f64(key, v)?),
        "duration_max" => set(&mut cfg.duration_s, false, parse_f64(key, v)?),
        "spin_min" => set(&mut cfg.spin_rad_s, true, parse_f64(key, v)?),
        "spin_max" => set(&mut cfg.spin_rad_s, false, parse_f64(key, v)?),
        "speed_min" => set(&mut cfg.speed_m_s, true, parse_f64(key, v)?),
        "speed_max" => set(&mut cfg.speed_m_s, false, parse_f64(key, v)?),
        "drag" => cfg.physics.drag = parse_f64(key, v)?,
        "magnus" => cfg.physics.magnus = parse_f64(key, v)?,
        "restitution" => cfg.physics.restitution = parse_f64(key, v)?,
        "tangential_retention" => cfg.physics.tangential_retention = parse_f64(key, v)?,
        "spin_surface_coupling" => cfg.physics.spin_surface_coupling = parse_f64(key, v)?,
        "spin_retention" => cfg.physics.spin_retention = parse_f64(key, v)?,
        "camera_distance_min" => set(&mut cfg.camera.distance_m, true, parse_f64(key, v)?),
        "camera_distance_max" => set(&mut cfg.camera.distance_m, false, parse_f64(key, v)?),
        "focal_min" => set(&mut cfg.camera.focal_px, true, parse_f64(key, v)?),
        "focal_max" => set(&mut cfg.camera.focal_px, false, parse_f64(key, v)?),
        "image_w" => cfg.camera.image_w = parse_usize(key, v)? as u32,
        "image_h" => cfg.camera.image_h = parse_usize(key, v)? as u32,
        "max_attempts" => cfg.max_attempts = parse_usize(key, v)?,
        _ => {
            return Err(CliError::Config(format!(
                "unknown generation key '{key}'"
            )))
        }
    }
    Ok(())
}

/// Applies one training/model override.
pub fn apply_train_key(
    train: &mut TrainConfig,
    model: &mut ModelConfig,
    model_seed: &mut u64,
    key: &str,
    v: &str,
) -> Result<(), CliError> {
    match key {
        "lr" | "learning_rate" => train.learning_rate = parse_f64(key, v)?,
        "batch" | "batch_size" => train.batch_size = parse_usize(key, v)?,
        "epochs" => train.epochs = parse_usize(key, v)?,
        "seed" => train.seed = parse_u64(key, v)?,
        "drop_ball" => train.drop_prob_ball = parse_f64(key, v)?,
        "drop_keypoint" => train.drop_prob_keypoint = parse_f64(key, v)?,
        "fps_min" => train.fps_min = parse_f64(key, v)?,
        "fps_max" => train.fps_max = parse_f64(key, v)?,
        "lambda_traj" => train.lambda_traj = parse_f64(key, v)?,
        "lambda_spin" => train.lambda_spin = parse_f64(key, v)?,
        "grad_clip" => train.grad_clip = parse_f64(key, v)?,
        "warmup_steps" => train.warmup_steps = parse_u64(key, v)?,
        "lr_final_frac" => train.lr_final_frac = parse_f64(key, v)?,
        "val_every" => train.val_every = parse_usize(key, v)?,
        "d" => model.d = parse_usize(key, v)?,
        "l" => model.l = parse_usize(key, v)?,
        "heads" => model.heads = parse_usize(key, v)?,
        "delta_t" => model.delta_t = parse_f64(key, v)?,
        "model_seed" => *model_seed = parse_u64(key, v)?,
        _ => return Err(CliError::Config(format!("unknown training key '{key}'"))),
    }
    Ok(())
}
