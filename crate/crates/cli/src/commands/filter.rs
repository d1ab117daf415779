//! `filter`: two-model agreement filtering of ball tracks plus keypoint
//! agreement and consolidation.

use std::io::Write;
use std::path::Path;

use ttlift::ballistics::read_jsonl;
use ttlift::camera::TableKeypointSet;
use ttlift::perception::{agreement_filter, consolidate_keypoints, DetectionTrack, DEFAULT_EPS_PX};

use crate::util::CliError;

pub fn run(
    primary: &Path,
    auxiliary: &Path,
    out: &Path,
    ball_threshold: f64,
    keypoint_threshold: f64,
) -> Result<(), CliError> {
    let prim = read_jsonl(primary)?;
    let aux = read_jsonl(auxiliary)?;
    if prim.len() != aux.len() {
        return Err(CliError::Data(format!(
            "primary has {} trajectories but auxiliary has {}",
            prim.len(),
            aux.len()
        )));
    }

    let dir = out.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = tempfile::NamedTempFile::new_in(
        dir.unwrap_or_else(|| Path::new(".")),
    )?;
    {
        let mut w = std::io::BufWriter::new(&mut tmp);
        for (p, a) in prim.iter().zip(&aux) {
            let p_track = DetectionTrack::new(p.times_s.clone(), p.ball2d_px.clone());
            let a_track = DetectionTrack::new(a.times_s.clone(), a.ball2d_px.clone());
            let filtered = agreement_filter(&p_track, &a_track, ball_threshold)
                .map_err(|e| CliError::Data(e.to_string()))?;

            // Keypoints: keep primary detections confirmed by the auxiliary
            // model, then consolidate.
            let mut agreed = TableKeypointSet::default();
            for i in 0..agreed.points.len() {
                if let (Some(pp), Some(ap)) = (
                    p.keypoints2d_px.get(i).copied().flatten(),
                    a.keypoints2d_px.get(i).copied().flatten(),
                ) {
                    let d = ((pp[0] - ap[0]).powi(2) + (pp[1] - ap[1]).powi(2)).sqrt();
                    if d <= keypoint_threshold {
                        agreed.points[i] = Some(pp);
                    }
                }
            }
            let consolidated = consolidate_keypoints(&[agreed], DEFAULT_EPS_PX, 1);

            let mut sample = p.clone();
            sample.ball2d_px = filtered.points;
            sample.ball_valid = sample.ball2d_px.iter().map(|p| p.is_some()).collect();
            for i in 0..sample.keypoints2d_px.len() {
                sample.keypoints2d_px[i] = consolidated.points[i];
                sample.keypoints_valid[i] = consolidated.points[i].is_some();
            }
            sample
                .validate()
                .map_err(|e| CliError::Data(format!("filtered sample invalid: {e}")))?;
            let line = serde_json::to_string(&sample).expect("sample serialization cannot fail");
            w.write_all(line.as_bytes())?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
    }
    tmp.persist(out)
        .map_err(|e| CliError::Data(format!("cannot persist output: {}", e.error)))?;
    println!("wrote {} filtered trajectories to {}", prim.len(), out.display());
    Ok(())
}
