//! `eval`: per-trajectory evaluation report with ACC / F1 / m2DRE
//! aggregates, optionally under a robustness transform.

use std::path::Path;

use ttlift::ballistics::{derive_seed, read_jsonl, SynthSample};
use ttlift::metrics::{
    apply_eval_transform, classification_scores, m2dre, spin_class, EvalTransform, SpinClass,
};
use ttlift::training::input_and_target;
use ttlift::uplift::{Checkpoint, Prediction, UpliftModel};

use crate::util::{atomic_write, CliError};

fn parse_transform(name: &str, seed: u64) -> Result<EvalTransform, CliError> {
    match name {
        "half-fps" => Ok(EvalTransform::half_fps()),
        "missing-detections" | "missing" => Ok(EvalTransform::missing_detections(seed)),
        other => Err(CliError::Config(format!(
            "unknown transform '{other}' (expected half-fps or missing-detections)"
        ))),
    }
}

pub fn run(
    checkpoint: Option<&Path>,
    dataset: &Path,
    out: &Path,
    transform: Option<&str>,
    seed: u64,
    oracle: bool,
) -> Result<(), CliError> {
    if checkpoint.is_none() && !oracle {
        return Err(CliError::Config(
            "either --checkpoint or --oracle is required".into(),
        ));
    }
    let samples = read_jsonl(dataset)?;
    if samples.is_empty() {
        return Err(CliError::Data("dataset is empty".into()));
    }
    let model = match checkpoint {
        Some(path) => Some(UpliftModel::from_checkpoint(&Checkpoint::load(path)?)?),
        None => None,
    };

    let mut rows = String::from("id,n_frames,m2dre_px,spin_truth,spin_pred\n");
    let mut truths: Vec<SpinClass> = Vec::with_capacity(samples.len());
    let mut preds: Vec<SpinClass> = Vec::with_capacity(samples.len());
    let mut m2dre_sum = 0.0;

    for (idx, sample) in samples.iter().enumerate() {
        let evaluated: SynthSample = match transform {
            Some(name) => {
                let mut t = parse_transform(name, seed)?;
                t.seed = derive_seed(seed, idx as u64);
                apply_eval_transform(sample, &t)
            }
            None => sample.clone(),
        };
        let (input, target) = input_and_target(&evaluated)?;
        let pred: Prediction = match &model {
            Some(m) => m.forward(&input)?,
            None => target.clone(),
        };
        let truth2d: Vec<[f64; 2]> = evaluated
            .ball2d_px
            .iter()
            .zip(&evaluated.ball_valid)
            .filter(|(_, &v)| v)
            .map(|(p, _)| p.expect("valid frame"))
            .collect();
        let reproj = m2dre(&pred.traj, &evaluated.camera(), &truth2d)
            .map_err(|e| CliError::Numeric(e.to_string()))?;
        let truth_class = spin_class(evaluated.truth_spin_rad_s, evaluated.init_v_m_s)
            .map_err(|e| CliError::Data(e.to_string()))?;
        let pred_class = spin_class(pred.spin_rad_s, evaluated.init_v_m_s)
            .map_err(|e| CliError::Numeric(e.to_string()))?;

        rows.push_str(&format!(
            "{},{},{},{},{}\n",
            idx,
            input.times_s.len(),
            reproj,
            truth_class,
            pred_class
        ));
        truths.push(truth_class);
        preds.push(pred_class);
        m2dre_sum += reproj;
    }

    let (acc, f1) = classification_scores(&truths, &preds)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mean_m2dre = m2dre_sum / samples.len() as f64;
    let footer = format!(
        "# aggregate n={} acc={:.4} f1={:.4} m2dre_px={:.4} transform={} oracle={}\n",
        samples.len(),
        acc,
        f1,
        mean_m2dre,
        transform.unwrap_or("none"),
        oracle
    );
    rows.push_str(&footer);
    atomic_write(out, rows.as_bytes())?;
    print!("{footer}");
    Ok(())
}
