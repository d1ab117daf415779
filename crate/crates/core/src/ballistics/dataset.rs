//! Synthetic sample records, the JSON Lines dataset schema and deterministic
//! dataset generation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ballistics::{
    sample_scenario, simulate_trajectory, ScenarioConfig, ScenarioError,
};
use crate::camera::{project, table_keypoints_3d, CameraModel, TableKeypointSet, NUM_KEYPOINTS};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Field names of the JSONL schema, in serialization order.
pub const SCHEMA_FIELDS: [&str; 13] = [
    "times_s",
    "ball2d_px",
    "ball_valid",
    "keypoints2d_px",
    "keypoints_valid",
    "camera_P",
    "truth_r3d_m",
    "truth_spin_rad_s",
    "image_w",
    "image_h",
    "fps",
    "scenario",
    "init_v_m_s",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: invalid JSON: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: invalid sample: {reason}")]
    Invalid { line: usize, reason: String },
}

/// One synthetic trajectory: timestamps, 2D ball track, table keypoints,
/// camera, and ground truth. Serialized as one JSON object per line.
///
/// `init_v_m_s` stores the launch velocity so a sample can be re-simulated
/// exactly at arbitrary timestamps (used by the frame-rate augmentation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSample {
    pub times_s: Vec<f64>,
    pub ball2d_px: Vec<Option<[f64; 2]>>,
    pub ball_valid: Vec<bool>,
    pub keypoints2d_px: Vec<Option<[f64; 2]>>,
    pub keypoints_valid: Vec<bool>,
    #[serde(rename = "camera_P")]
    pub camera_p: [f64; 12],
    pub truth_r3d_m: Vec<[f64; 3]>,
    pub truth_spin_rad_s: [f64; 3],
    pub image_w: u32,
    pub image_h: u32,
    pub fps: f64,
    pub scenario: String,
    pub init_v_m_s: [f64; 3],
}

impl SynthSample {
    pub fn n_frames(&self) -> usize {
        self.times_s.len()
    }

    pub fn n_valid(&self) -> usize {
        self.ball_valid.iter().filter(|&&v| v).count()
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel::from_rows(&self.camera_p)
    }

    pub fn keypoint_set(&self) -> TableKeypointSet {
        let mut set = TableKeypointSet::default();
        for i in 0..NUM_KEYPOINTS.min(self.keypoints2d_px.len()) {
            if self.keypoints_valid.get(i).copied().unwrap_or(false) {
                set.points[i] = self.keypoints2d_px[i];
            }
        }
        set
    }

    pub fn validate(&self) -> Result<(), String> {
        let n = self.times_s.len();
        if n < 2 {
            return Err(format!("need at least 2 frames, got {n}"));
        }
        if self.ball2d_px.len() != n || self.ball_valid.len() != n || self.truth_r3d_m.len() != n {
            return Err("times_s, ball2d_px, ball_valid and truth_r3d_m lengths differ".into());
        }
        for i in 1..n {
            if self.times_s[i] <= self.times_s[i - 1] {
                return Err(format!("times_s not strictly increasing at index {i}"));
            }
        }
        if self.keypoints2d_px.len() != NUM_KEYPOINTS || self.keypoints_valid.len() != NUM_KEYPOINTS
        {
            return Err(format!("expected {NUM_KEYPOINTS} keypoint entries"));
        }
        for i in 0..n {
            if self.ball_valid[i] != self.ball2d_px[i].is_some() {
                return Err(format!("ball_valid[{i}] inconsistent with ball2d_px[{i}]"));
            }
        }
        for i in 0..NUM_KEYPOINTS {
            if self.keypoints_valid[i] != self.keypoints2d_px[i].is_some() {
                return Err(format!(
                    "keypoints_valid[{i}] inconsistent with keypoints2d_px[{i}]"
                ));
            }
        }
        if self.image_w == 0 || self.image_h == 0 || !(self.fps > 0.0) {
            return Err("image size and fps must be positive".into());
        }
        Ok(())
    }
}

/// Seed for trajectory `index` within a dataset generated from `master`.
/// splitmix64 of the index keeps per-trajectory streams independent, so
/// generation order does not matter.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn build_sample(cfg: &ScenarioConfig, seed: u64) -> Result<SynthSample, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // The scenario sampler already rejects off-screen or truncated draws;
    // this outer loop only re-rolls the rare boundary case where the frame
    // grid disagrees with the dense pre-check.
    for _ in 0..cfg.max_attempts {
        let (init, camera, times) = sample_scenario(&mut rng, cfg)?;
        let states = simulate_trajectory(&init, &cfg.physics, &times)?;
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

        let mut keypoints2d = Vec::with_capacity(NUM_KEYPOINTS);
        for p in table_keypoints_3d() {
            match project(&camera, p) {
                Ok(px) => keypoints2d.push(Some(px)),
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }

        let n = states.len();
        // Nominal rate recovered from the uniform grid (times[1] = 1/fps).
        let fps = 1.0 / times[1];
        return Ok(SynthSample {
            times_s: times,
            ball2d_px: ball2d,
            ball_valid: vec![true; n],
            keypoints2d_px: keypoints2d,
            keypoints_valid: vec![true; NUM_KEYPOINTS],
            camera_p: camera.to_rows(),
            truth_r3d_m: states.iter().map(|s| [s.r.x, s.r.y, s.r.z]).collect(),
            truth_spin_rad_s: [init.omega.x, init.omega.y, init.omega.z],
            image_w: cfg.camera.image_w,
            image_h: cfg.camera.image_h,
            fps,
            scenario: cfg.kind.to_string(),
            init_v_m_s: [init.v.x, init.v.y, init.v.z],
        });
    }
    Err(ScenarioError::SamplingExhausted(cfg.max_attempts))
}

/// Generates `n_trajectories` independent samples. Each trajectory uses its
/// own derived seed, so the result is identical no matter how the work is
/// scheduled.
pub fn generate_dataset(
    cfg: &ScenarioConfig,
    n_trajectories: usize,
    seed: u64,
) -> Result<Vec<SynthSample>, ScenarioError> {
    if n_trajectories == 0 {
        return Err(ScenarioError::InvalidConfig(
            "n_trajectories must be >= 1".into(),
        ));
    }
    cfg.validate()?;
    (0..n_trajectories)
        .into_par_iter()
        .map(|i| build_sample(cfg, derive_seed(seed, i as u64)))
        .collect()
}

/// Writes samples as JSON Lines.
pub fn write_jsonl<'a, I, P>(path: P, samples: I) -> Result<(), DatasetError>
where
    I: IntoIterator<Item = &'a SynthSample>,
    P: AsRef<Path>,
{
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    for s in samples {
        let line = serde_json::to_string(s).expect("sample serialization cannot fail");
        w.write_all(line.as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads and validates a JSONL dataset.
pub fn read_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<SynthSample>, DatasetError> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: SynthSample =
            serde_json::from_str(&line).map_err(|source| DatasetError::Json {
                line: idx + 1,
                source,
            })?;
        sample.validate().map_err(|reason| DatasetError::Invalid {
            line: idx + 1,
            reason,
        })?;
        out.push(sample);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ballistics::ScenarioKind;
    use nalgebra::Vector3;

    fn small_cfg() -> ScenarioConfig {
        ScenarioConfig::preset(ScenarioKind::RallyLeft)
    }

    #[test]
    fn generation_is_deterministic_and_order_independent() {
        let cfg = small_cfg();
        let a = generate_dataset(&cfg, 4, 99).unwrap();
        let b = generate_dataset(&cfg, 4, 99).unwrap();
        assert_eq!(a, b);
        // The third trajectory alone equals the third of the batch.
        let solo = build_sample(&cfg, derive_seed(99, 2)).unwrap();
        assert_eq!(a[2], solo);
    }

    #[test]
    fn truth_reprojects_exactly_onto_track() {
        let cfg = small_cfg();
        let samples = generate_dataset(&cfg, 3, 5).unwrap();
        for s in &samples {
            let cam = s.camera();
            for (i, r) in s.truth_r3d_m.iter().enumerate() {
                let px = project(&cam, Vector3::new(r[0], r[1], r[2])).unwrap();
                let b = s.ball2d_px[i].unwrap();
                assert_eq!(px, b);
            }
        }
    }

    #[test]
    fn jsonl_roundtrip_is_exact() {
        let cfg = small_cfg();
        let samples = generate_dataset(&cfg, 2, 123).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        write_jsonl(&path, &samples).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(samples, back);
        // Re-writing produces byte-identical output.
        let bytes1 = std::fs::read(&path).unwrap();
        let path2 = dir.path().join("data2.jsonl");
        write_jsonl(&path2, &back).unwrap();
        let bytes2 = std::fs::read(&path2).unwrap();
        assert_eq!(bytes1, bytes2);
    }

    #[test]
    fn schema_field_names_are_exact() {
        let cfg = small_cfg();
        let samples = generate_dataset(&cfg, 1, 7).unwrap();
        let value: serde_json::Value =
            serde_json::from_str(&serde_json::to_string(&samples[0]).unwrap()).unwrap();
        let obj = value.as_object().unwrap();
        for field in SCHEMA_FIELDS {
            assert!(obj.contains_key(field), "missing field {field}");
        }
    }

    #[test]
    fn zero_trajectories_is_an_error() {
        let cfg = small_cfg();
        assert!(matches!(
            generate_dataset(&cfg, 0, 1),
            Err(ScenarioError::InvalidConfig(_))
        ));
    }
}
