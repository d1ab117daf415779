//! `calibrate`: RANSAC camera estimation from a sample's detected table
//! keypoints, with a per-keypoint reprojection report.

use std::path::Path;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ttlift::ballistics::read_jsonl;
use ttlift::camera::{project, ransac_calibrate, table_keypoints_3d};

use crate::util::{atomic_write, CliError};

pub fn run(
    dataset: &Path,
    index: usize,
    out: &Path,
    tau: f64,
    iters: usize,
    seed: u64,
) -> Result<(), CliError> {
    let samples = read_jsonl(dataset)?;
    let sample = samples.get(index).ok_or_else(|| {
        CliError::Data(format!(
            "index {index} out of range (dataset has {})",
            samples.len()
        ))
    })?;

    let world = table_keypoints_3d();
    let mut corr = Vec::new();
    let mut corr_indices = Vec::new();
    for (i, p) in sample.keypoint_set().available() {
        corr.push(([world[i].x, world[i].y, world[i].z], p));
        corr_indices.push(i);
    }
    if corr.len() < 6 {
        return Err(CliError::Data(format!(
            "need at least 6 available keypoints, got {}",
            corr.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (camera, mask) = ransac_calibrate(&corr, tau, iters, &mut rng)?;

    let mut per_point: Vec<Option<f64>> = vec![None; world.len()];
    let mut inlier_flags: Vec<Option<bool>> = vec![None; world.len()];
    let mut err_sum = 0.0;
    let mut inlier_sum = 0.0;
    let mut inlier_count = 0usize;
    for (slot, (&kp_index, &(w, px))) in corr_indices.iter().zip(corr.iter()).enumerate() {
        let err = match project(&camera, Vector3::new(w[0], w[1], w[2])) {
            Ok(reproj) => ((reproj[0] - px[0]).powi(2) + (reproj[1] - px[1]).powi(2)).sqrt(),
            Err(_) => f64::INFINITY,
        };
        per_point[kp_index] = Some(err);
        inlier_flags[kp_index] = Some(mask[slot]);
        err_sum += err;
        if mask[slot] {
            inlier_sum += err;
            inlier_count += 1;
        }
    }

    let report = serde_json::json!({
        "camera_P": camera.to_rows().to_vec(),
        "tau_px": tau,
        "iterations": iters,
        "seed": seed,
        "n_keypoints": corr.len(),
        "n_inliers": inlier_count,
        "inliers": inlier_flags,
        "per_keypoint_error_px": per_point,
        "table_m2dre_px": err_sum / corr.len() as f64,
        "table_m2dre_inliers_px": if inlier_count > 0 { inlier_sum / inlier_count as f64 } else { f64::NAN },
    });
    atomic_write(
        out,
        serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Data(e.to_string()))?
            .as_bytes(),
    )?;
    println!(
        "calibrated from {} keypoints: {} inliers, table m2DRE {:.4} px",
        corr.len(),
        inlier_count,
        err_sum / corr.len() as f64
    );
    Ok(())
}
