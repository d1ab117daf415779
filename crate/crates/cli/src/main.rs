//! Command-line pipeline driver: synthetic dataset generation, training,
//! evaluation, overlay plots, detection filtering and camera calibration.
//!
//! Every subcommand is deterministic given its inputs and seeds, writes
//! output files atomically, and exits with 0 on success, 2 on configuration
//! errors, 3 on data errors and 4 on numerical failures.

mod commands;
mod kv;
mod svg;
mod util;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ttlift", version, about = "Synthetic table tennis 3D trajectory and spin pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trajectory dataset (JSONL + manifest).
    Generate {
        /// Output directory for dataset.jsonl and manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Number of trajectories.
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Preset: default | paper | desk-train | desk-eval.
        #[arg(long, default_value = "default")]
        preset: String,
        /// Flat key=value config file applied over the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Inline key=value overrides (highest precedence).
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Confirm long-running generation (required for n >= 50000).
        #[arg(long)]
        yes: bool,
    },
    /// Train the uplifting network on a generated dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Validation dataset; defaults to holding out the last 10% of the
        /// training file.
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Resume from a trainer checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
    },
    /// Evaluate a checkpoint on a dataset; writes a per-trajectory CSV
    /// report with an aggregate footer.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional robustness transform: half-fps | missing-detections.
        #[arg(long)]
        transform: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Feed ground-truth 3D through reprojection instead of a model.
        #[arg(long)]
        oracle: bool,
    },
    /// Render detections, reprojected keypoints and the predicted
    /// trajectory as an SVG overlay.
    Plot {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        /// Model checkpoint; without it the ground-truth trajectory is
        /// rendered.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Two-model agreement filtering of ball tracks and table keypoints.
    Filter {
        #[arg(long)]
        primary: PathBuf,
        #[arg(long)]
        auxiliary: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ball agreement threshold (px).
        #[arg(long, default_value_t = 20.0)]
        ball_threshold: f64,
        /// Keypoint agreement threshold (px).
        #[arg(long, default_value_t = 10.0)]
        keypoint_threshold: f64,
    },
    /// RANSAC camera calibration from a sample's table keypoints.
    Calibrate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
        /// Inlier threshold (px).
        #[arg(long, default_value_t = 3.0)]
        tau: f64,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate {
            out,
            n,
            seed,
            preset,
            config,
            sets,
            yes,
        } => commands::generate::run(&out, n, seed, &preset, config.as_deref(), &sets, yes),
        Command::Train {
            dataset,
            val,
            out,
            resume,
            config,
            sets,
        } => commands::train::run(
            &dataset,
            val.as_deref(),
            &out,
            resume.as_deref(),
            config.as_deref(),
            &sets,
        ),
        Command::Eval {
            checkpoint,
            dataset,
            out,
            transform,
            seed,
            oracle,
        } => commands::eval::run(
            checkpoint.as_deref(),
            &dataset,
            &out,
            transform.as_deref(),
            seed,
            oracle,
        ),
        Command::Plot {
            dataset,
            index,
            out,
            checkpoint,
        } => commands::plot::run(&dataset, index, &out, checkpoint.as_deref()),
        Command::Filter {
            primary,
            auxiliary,
            out,
            ball_threshold,
            keypoint_threshold,
        } => commands::filter::run(&primary, &auxiliary, &out, ball_threshold, keypoint_threshold),
        Command::Calibrate {
            dataset,
            index,
            out,
            tau,
            iters,
            seed,
        } => commands::calibrate::run(&dataset, index, &out, tau, iters, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
