//! `plot`: SVG overlay of detections, reprojected table keypoints and the
//! (predicted or ground-truth) 3D trajectory.

use std::path::Path;

use nalgebra::Vector3;
use ttlift::ballistics::read_jsonl;
use ttlift::camera::{project, table_keypoints_3d};
use ttlift::training::input_and_target;
use ttlift::uplift::{Checkpoint, UpliftModel};

use crate::svg::{render, MarkerLayer};
use crate::util::{atomic_write, CliError};

pub fn run(
    dataset: &Path,
    index: usize,
    out: &Path,
    checkpoint: Option<&Path>,
) -> Result<(), CliError> {
    let samples = read_jsonl(dataset)?;
    let sample = samples
        .get(index)
        .ok_or_else(|| CliError::Data(format!("index {index} out of range (dataset has {})", samples.len())))?;
    let camera = sample.camera();

    let detections: Vec<[f64; 2]> = sample.ball2d_px.iter().flatten().copied().collect();

    let keypoints: Vec<[f64; 2]> = table_keypoints_3d()
        .iter()
        .filter_map(|p| project(&camera, *p).ok())
        .collect();

    let (input, target) = input_and_target(sample)?;
    let traj = match checkpoint {
        Some(path) => {
            let model = UpliftModel::from_checkpoint(&Checkpoint::load(path)?)?;
            model.forward(&input)?.traj
        }
        None => target.traj,
    };
    let predicted: Vec<[f64; 2]> = traj
        .iter()
        .filter_map(|p| project(&camera, Vector3::new(p[0], p[1], p[2])).ok())
        .collect();

    let layers = [
        MarkerLayer {
            id: "detections",
            color: "#00ff00",
            radius: 4.0,
            points: detections,
        },
        MarkerLayer {
            id: "keypoints",
            color: "#ff0000",
            radius: 5.0,
            points: keypoints,
        },
        MarkerLayer {
            id: "prediction",
            color: "#0000ff",
            radius: 2.5,
            points: predicted,
        },
    ];
    let doc = render(sample.image_w, sample.image_h, &layers);
    atomic_write(out, doc.as_bytes())?;
    println!("wrote {}", out.display());
    Ok(())
}
