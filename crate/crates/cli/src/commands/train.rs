//! `train`: training loop driver with per-epoch reporting, checkpointing
//! and exact resume.

use std::path::Path;

use ttlift::ballistics::read_jsonl;
use ttlift::training::{evaluate_model, EpochStats, TrainConfig, TrainError, Trainer};
use ttlift::uplift::{Checkpoint, ModelConfig, UpliftModel};

use crate::kv;
use crate::util::{atomic_write, CliError};

pub fn run(
    dataset: &Path,
    val: Option<&Path>,
    out: &Path,
    resume: Option<&Path>,
    config: Option<&Path>,
    sets: &[String],
) -> Result<(), CliError> {
    let mut train_cfg = TrainConfig::default();
    let mut model_cfg = ModelConfig::default();
    let mut model_seed = 0u64;
    kv::apply_layers(config, sets, |k, v| {
        kv::apply_train_key(&mut train_cfg, &mut model_cfg, &mut model_seed, k, v)
    })?;

    let all = read_jsonl(dataset)?;
    if all.is_empty() {
        return Err(CliError::Data(format!(
            "dataset {} is empty",
            dataset.display()
        )));
    }
    let (train_set, val_set) = match val {
        Some(path) => {
            let v = read_jsonl(path)?;
            if v.is_empty() {
                return Err(CliError::Data(format!("validation set {} is empty", path.display())));
            }
            (all, v)
        }
        None => {
            // Hold out the last 10% (at least one trajectory).
            let n_val = (all.len() / 10).max(1);
            if n_val >= all.len() {
                return Err(CliError::Data(
                    "dataset too small to split a validation set".into(),
                ));
            }
            let split = all.len() - n_val;
            let mut train = all;
            let val = train.split_off(split);
            (train, val)
        }
    };

    std::fs::create_dir_all(out)?;
    let mut trainer = match resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            Trainer::from_checkpoint(&ckpt, train_cfg, train_set.len())?
        }
        None => {
            let model = UpliftModel::new(model_cfg, model_seed)?;
            println!(
                "model: d={} l={} heads={} ({} parameters)",
                model.config.d,
                model.config.l,
                model.config.heads,
                model.num_params()
            );
            Trainer::new(model, train_cfg, train_set.len())?
        }
    };

    let trainer_path = out.join("checkpoint.ckpt");
    let history_path = out.join("history.csv");
    while trainer.next_epoch < train_cfg.epochs {
        let epoch = trainer.next_epoch;
        let loss = match trainer.run_epoch(&train_set) {
            Ok(l) => l,
            Err(e @ TrainError::Diverged { .. }) => {
                // Leave the history behind for post-mortems.
                if let TrainError::Diverged { ref history, .. } = e {
                    let _ = atomic_write(&history_path, history.to_csv().as_bytes());
                }
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        };
        let validate = epoch % train_cfg.val_every == 0 || epoch + 1 == train_cfg.epochs;
        let (f1, m2dre) = if validate {
            let s = evaluate_model(&trainer.model, &val_set)?;
            (Some(s.spin_macro_f1), Some(s.m2dre_px))
        } else {
            (None, None)
        };
        trainer.record_epoch(EpochStats {
            epoch,
            train_loss: loss,
            val_f1: f1,
            val_m2dre: m2dre,
        });
        println!(
            "epoch {} loss {:.6} f1 {} m2dre {}",
            epoch,
            loss,
            f1.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            m2dre
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "-".into()),
        );

        save_checkpoint_atomic(&trainer.to_checkpoint(), &trainer_path)?;
        atomic_write(&history_path, trainer.history.to_csv().as_bytes())?;
    }

    let best_epoch = trainer.best_epoch();
    let best = trainer.best_model().to_checkpoint(serde_json::json!({
        "selected_epoch": best_epoch,
    }));
    save_checkpoint_atomic(&best, &out.join("best.ckpt"))?;
    println!(
        "selected epoch {} -> {}",
        best_epoch
            .map(|e| e.to_string())
            .unwrap_or_else(|| "(last)".into()),
        out.join("best.ckpt").display()
    );
    Ok(())
}

fn save_checkpoint_atomic(ckpt: &Checkpoint, path: &Path) -> Result<(), CliError> {
    let tmp = path.with_extension("ckpt.tmp");
    ckpt.save(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
