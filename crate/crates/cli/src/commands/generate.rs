//! `generate`: synthetic dataset generation with scenario mixtures.

use std::io::Write;
use std::path::Path;

use ttlift::ballistics::{derive_seed, generate_dataset, ScenarioConfig, ScenarioKind};

use crate::kv;
use crate::util::{atomic_write, fnv1a_hex, CliError};

/// Scenario mixture weights: rallies dominate, serves and faults round out
/// the corpus.
const MIX: [(ScenarioKind, f64); 5] = [
    (ScenarioKind::RallyLeft, 0.3),
    (ScenarioKind::RallyRight, 0.3),
    (ScenarioKind::Serve, 0.2),
    (ScenarioKind::FaultNet, 0.1),
    (ScenarioKind::FaultLong, 0.1),
];

const CONFIRM_THRESHOLD: usize = 50_000;

fn preset_config(preset: &str, kind: ScenarioKind) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::preset(kind);
    match preset {
        "default" | "paper" => {}
        "desk-train" => {
            cfg.duration_s = ttlift::ballistics::Range::new(0.4, 0.9);
        }
        "desk-eval" => {
            cfg.duration_s = ttlift::ballistics::Range::new(0.4, 0.9);
            cfg.fps_hz = ttlift::ballistics::Range::new(40.0, 60.0);
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown preset '{other}' (expected default, paper, desk-train or desk-eval)"
            )))
        }
    }
    Ok(cfg)
}

pub fn run(
    out: &Path,
    n: usize,
    seed: u64,
    preset: &str,
    config: Option<&Path>,
    sets: &[String],
    yes: bool,
) -> Result<(), CliError> {
    let n = if preset == "paper" { 140_000 } else { n };
    if n == 0 {
        return Err(CliError::Config("n must be >= 1".into()));
    }
    if n >= CONFIRM_THRESHOLD && !yes {
        return Err(CliError::Config(format!(
            "refusing to generate {n} trajectories without --yes"
        )));
    }

    let mut configs: Vec<ScenarioConfig> = MIX
        .iter()
        .map(|(kind, _)| preset_config(preset, *kind))
        .collect::<Result<_, _>>()?;
    for cfg in &mut configs {
        kv::apply_layers(config, sets, |k, v| kv::apply_scenario_key(cfg, k, v))?;
    }

    // Per-kind counts: floor of the weight share, remainder spread from the
    // front so the split is deterministic.
    let mut counts: Vec<usize> = MIX.iter().map(|(_, w)| (w * n as f64).floor() as usize).collect();
    let mut assigned: usize = counts.iter().sum();
    let n_kinds = counts.len();
    let mut i = 0;
    while assigned < n {
        counts[i % n_kinds] += 1;
        assigned += 1;
        i += 1;
    }

    std::fs::create_dir_all(out)?;
    let dataset_path = out.join("dataset.jsonl");
    let mut tmp = tempfile::NamedTempFile::new_in(out)?;
    let mut total_positions = 0usize;
    let mut written = 0usize;
    {
        let mut w = std::io::BufWriter::new(&mut tmp);
        for (idx, (cfg, count)) in configs.iter().zip(&counts).enumerate() {
            if *count == 0 {
                continue;
            }
            let kind_seed = derive_seed(seed, 1000 + idx as u64);
            let samples = generate_dataset(cfg, *count, kind_seed)?;
            for s in &samples {
                total_positions += s.n_frames();
                let line =
                    serde_json::to_string(s).expect("sample serialization cannot fail");
                w.write_all(line.as_bytes())?;
                w.write_all(b"\n")?;
                written += 1;
            }
        }
        w.flush()?;
    }
    tmp.persist(&dataset_path)
        .map_err(|e| CliError::Data(format!("cannot persist dataset: {}", e.error)))?;

    let config_json =
        serde_json::to_vec(&configs).map_err(|e| CliError::Data(e.to_string()))?;
    let manifest = serde_json::json!({
        "dataset": "dataset.jsonl",
        "seed": seed,
        "preset": preset,
        "n_trajectories": written,
        "counts": MIX
            .iter()
            .zip(&counts)
            .map(|((kind, _), c)| (kind.as_str().to_string(), *c))
            .collect::<std::collections::BTreeMap<_, _>>(),
        "total_positions": total_positions,
        "config_digest": fnv1a_hex(&config_json),
        "scenario_configs": serde_json::from_slice::<serde_json::Value>(&config_json).unwrap(),
    });
    atomic_write(
        &out.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::Data(e.to_string()))?
            .as_bytes(),
    )?;

    println!(
        "wrote {} trajectories ({} 2D positions) to {}",
        written,
        total_positions,
        dataset_path.display()
    );
    Ok(())
}
