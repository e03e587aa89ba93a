//! Command-line surface: train, ablate, sample, interpolate, backtrack, and
//! gradcheck, all driven by one strict JSON config or a checkpoint file.
//!
//! Exit codes: 0 success, 1 verification/runtime failure, 2 configuration
//! error (including argument parsing), 3 I/O or corrupt artifact, 4
//! capability unsupported by the generator family.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::ablation::{
    ablation_run, probe_seed, spec_for_token, write_report_csv, FAMILY_TOKENS, REPORT_HEADER,
};
use crate::config::ExperimentConfig;
use crate::data::{synth_dataset, VideoTensor};
use crate::error::{Error, Result};
use crate::gradcheck::FaultSpec;
use crate::io::{write_ndev, write_pgm};
use crate::metrics::train_probe;
use crate::nn::{derive_seed, seeded_rng};
use crate::temporal::{sample_latent, Family};
use crate::videogan::{
    load_model, run_pipeline_checks, train_gan, GanModel, StageReport, TrainOptions,
};

/// Environment variable holding an injected gradient fault
/// (`block:entry:delta`) for exercising the gradcheck failure path.
pub const FAULT_ENV: &str = "NDEV_GRADCHECK_FAULT";

#[derive(Parser)]
#[command(
    name = "ndev",
    about = "Continuous-time latent video generation: training, ablation and inspection",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VideoFormat {
    /// One binary .ndev file per video.
    Ndev,
    /// One directory of P5 .pgm frames per video.
    Pgm,
}

#[derive(Subcommand)]
enum Command {
    /// Train the configured model, writing checkpoints and metric logs.
    Train {
        /// Experiment config (strict JSON).
        #[arg(long)]
        config: PathBuf,
    },
    /// Train every requested temporal family under identical settings and
    /// write a comparison report.
    Ablate {
        /// Experiment config (strict JSON); its temporal section is the
        /// shared base every family inherits.
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated family tokens (default: the full grid).
        #[arg(long, value_delimiter = ',')]
        families: Vec<String>,
    },
    /// Sample videos from a checkpoint.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of videos.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Base seed; video j draws from streams (seed, 0, j) and (seed, 1, j).
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = VideoFormat::Ndev)]
        format: VideoFormat,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample videos at a higher frame rate by reading intermediate solver
    /// nodes (continuous-time families only).
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Frame-rate multiplier; must divide the solver's steps per unit.
        #[arg(long)]
        factor: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = VideoFormat::Ndev)]
        format: VideoFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extend sampled videos backward in time (ode family only).
    Backtrack {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Number of pre-roll frames before time 0.
        #[arg(long)]
        pre_frames: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = VideoFormat::Ndev)]
        format: VideoFormat,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic gradients against central finite differences for
    /// every temporal family plus the image generator and discriminator.
    Gradcheck {
        /// Experiment config; supplies the latent dimension, seeds and
        /// optional solver override shared by all checked families.
        #[arg(long)]
        config: PathBuf,
    },
}

/// Parses arguments and runs; the returned code is the process exit status.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Train { config } => cmd_train(&config),
        Command::Ablate { config, families } => cmd_ablate(&config, &families),
        Command::Sample { checkpoint, count, seed, format, out } => {
            cmd_sample(&checkpoint, count, seed, format, &out)
        }
        Command::Interpolate { checkpoint, factor, count, seed, format, out } => {
            cmd_interpolate(&checkpoint, factor, count, seed, format, &out)
        }
        Command::Backtrack { checkpoint, pre_frames, count, seed, format, out } => {
            cmd_backtrack(&checkpoint, pre_frames, count, seed, format, &out)
        }
        Command::Gradcheck { config } => cmd_gradcheck(&config),
    }
}

// ---------------------------------------------------------------------------
// train / ablate
// ---------------------------------------------------------------------------

fn cmd_train(config_path: &Path) -> Result<ExitCode> {
    let cfg = ExperimentConfig::load(config_path)?;
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", cfg.output_dir.display())))?;

    let data = synth_dataset(&cfg.dataset)?;
    let probe = train_probe(&data, probe_seed(&cfg.gan))?;
    let mut model = GanModel::build(&cfg.temporal, cfg.gan.seeds.params)?;
    println!(
        "training {} (G_t {} params) on {} {} videos",
        crate::videogan::family_label(&cfg.temporal),
        model.temporal().param_count(),
        data.len(),
        cfg.dataset.kind.as_str(),
    );

    let outcome =
        train_gan(&mut model, &cfg.gan, &data, &probe, &cfg.output_dir, &TrainOptions::default())?;
    if let Some(initial) = &outcome.initial {
        println!(
            "step 0: is {:.4} ± {:.4}, fid {:.4} (untrained)",
            initial.is_mean, initial.is_std, initial.fid
        );
    }
    for row in &outcome.rows {
        println!(
            "step {}: loss_d {:.4}, loss_g {:.4}, is {:.4} ± {:.4}, fid {:.4}",
            row.step, row.loss_d, row.loss_g, row.is_mean, row.is_std, row.fid
        );
    }
    println!(
        "done: {} steps at {:.3} s/step; best checkpoint at step {} (is {:.4}); artifacts in {}",
        outcome.completed_steps,
        outcome.seconds_per_step,
        outcome.best_step,
        outcome.best_is,
        cfg.output_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_ablate(config_path: &Path, families: &[String]) -> Result<ExitCode> {
    let cfg = ExperimentConfig::load(config_path)?;
    let tokens: Vec<String> = if families.is_empty() {
        FAMILY_TOKENS.iter().map(|s| s.to_string()).collect()
    } else {
        families.to_vec()
    };
    let specs = tokens
        .iter()
        .map(|t| spec_for_token(&cfg.temporal, t))
        .collect::<Result<Vec<_>>>()?;

    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", cfg.output_dir.display())))?;
    let reports = ablation_run(
        &specs,
        &cfg.gan,
        &cfg.dataset,
        &cfg.output_dir,
        &TrainOptions::default(),
    )?;

    let report_path = cfg.output_dir.join("ablation.csv");
    write_report_csv(&report_path, &reports)?;
    println!("{REPORT_HEADER}");
    for row in &reports {
        println!("{}", row.to_csv());
    }
    println!("report written to {}", report_path.display());
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// sample / interpolate / backtrack
// ---------------------------------------------------------------------------

/// Renders `count` videos through `sample_one` and writes them under `out`.
fn export_videos(
    model: &GanModel,
    count: usize,
    seed: u64,
    format: VideoFormat,
    out: &Path,
    sample_one: impl Fn(&GanModel, &crate::tensor::Tensor, u64) -> Result<VideoTensor>,
) -> Result<usize> {
    if count == 0 {
        return Err(Error::config("count must be at least 1"));
    }
    fs::create_dir_all(out).map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
    let d = model.temporal().latent_dim();
    let mut frames_written = 0;
    for j in 0..count {
        let z_c = sample_latent(d, &mut seeded_rng(seed, 0, j as u64));
        let wiener_seed = derive_seed(seed, 1, j as u64);
        let video = sample_one(model, &z_c, wiener_seed)?;
        match format {
            VideoFormat::Ndev => {
                write_ndev(&out.join(format!("video_{j:03}.ndev")), &video)?;
            }
            VideoFormat::Pgm => {
                let dir = out.join(format!("video_{j:03}"));
                fs::create_dir_all(&dir)
                    .map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
                for t in 0..video.frames() {
                    write_pgm(
                        &dir.join(format!("frame_{t:03}.pgm")),
                        video.frame(t),
                        video.height(),
                        video.width(),
                    )?;
                }
            }
        }
        frames_written = video.frames();
    }
    Ok(frames_written)
}

fn cmd_sample(
    checkpoint: &Path,
    count: usize,
    seed: u64,
    format: VideoFormat,
    out: &Path,
) -> Result<ExitCode> {
    let (model, meta) = load_model(checkpoint)?;
    let frames = export_videos(&model, count, seed, format, out, |m, z_c, ws| {
        m.sample_video_values(z_c, ws)
    })?;
    println!(
        "wrote {count} video(s) of {frames} frames ({} at step {}) to {}",
        crate::videogan::family_label(&meta.temporal),
        meta.step,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_interpolate(
    checkpoint: &Path,
    factor: usize,
    count: usize,
    seed: u64,
    format: VideoFormat,
    out: &Path,
) -> Result<ExitCode> {
    let (model, meta) = load_model(checkpoint)?;
    let family = meta.temporal.family;
    if !matches!(family, Family::Ode | Family::Sde) {
        return Err(Error::Unsupported(format!(
            "capability not supported by family: frame-rate interpolation needs a continuous-time family (ode or sde), not {}",
            family.as_str()
        )));
    }
    if factor == 0 {
        return Err(Error::config("factor must be at least 1"));
    }
    let frames = export_videos(&model, count, seed, format, out, |m, z_c, ws| {
        m.sample_video_values_at_rate(z_c, ws, factor)
    })?;
    println!(
        "wrote {count} video(s) of {frames} frames (factor {factor}) to {}",
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_backtrack(
    checkpoint: &Path,
    pre_frames: usize,
    count: usize,
    seed: u64,
    format: VideoFormat,
    out: &Path,
) -> Result<ExitCode> {
    let (model, _meta) = load_model(checkpoint)?;
    let frames = export_videos(&model, count, seed, format, out, |m, z_c, _ws| {
        m.backtrack_video_values(z_c, pre_frames)
    })?;
    println!(
        "wrote {count} video(s) of {frames} frames ({pre_frames} pre-roll) to {}",
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

fn print_stage(report: &StageReport) {
    let r = &report.report;
    println!(
        "{:<12} max rel err {:.3e} over {} entries (tol {:.0e}) .. {}",
        report.stage,
        r.max_rel_err,
        r.entries_checked,
        report.tol,
        if r.passed { "pass" } else { "FAIL" }
    );
    if !r.passed {
        println!("  worst offender: block {} entry {}", r.worst_block, r.worst_entry);
        for (block, err) in &r.per_block {
            println!("  block {block:<12} max rel err {err:.3e}");
        }
    }
}

fn cmd_gradcheck(config_path: &Path) -> Result<ExitCode> {
    let cfg = ExperimentConfig::load(config_path)?;
    let fault = match std::env::var(FAULT_ENV) {
        Ok(text) => Some(FaultSpec::parse(&text)?),
        Err(_) => None,
    };

    let specs = FAMILY_TOKENS
        .iter()
        .map(|t| spec_for_token(&cfg.temporal, t))
        .collect::<Result<Vec<_>>>()?;
    let reports = run_pipeline_checks(&specs, cfg.gan.seeds.params, fault.as_ref())?;

    let mut all_passed = true;
    for report in &reports {
        print_stage(report);
        all_passed &= report.report.passed;
    }
    if all_passed {
        println!("gradient check passed: {} stages", reports.len());
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradient check FAILED");
        Ok(ExitCode::FAILURE)
    }
}
