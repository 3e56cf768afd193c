//! The four pipeline commands. Each writes its artifacts, the resolved
//! config and a manifest into its own subdirectory of the output root.

use crate::config::RunConfig;
use crate::errors::{CliError, Result};
use crate::manifest::write_manifest;
use ndarray::Array2;
use serde::Serialize;
use sfml_core::dataset::build_pairs;
use sfml_core::evaluation::{
    conditional_samples, deterministic_coordinates, held_out_latent_ks, recover_drift_diffusion,
    reference_stats, rollout_ensemble, EnsembleStats, RecoveryMode,
};
use sfml_core::io;
use sfml_core::rng::{domain, mix_seed};
use sfml_core::sde::simulate_trajectories;
use sfml_core::training::{report_from_rows, train, SweepRow};
use sfml_core::{Error as CoreError, Exec};
use std::path::{Path, PathBuf};

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("creating {}: {e}", dir.display())))
}

fn write_resolved_config(dir: &Path, cfg: &RunConfig) -> Result<PathBuf> {
    let resolved = cfg.resolved()?;
    let name = PathBuf::from("config.resolved.toml");
    std::fs::write(dir.join(&name), resolved.to_toml()?.as_bytes())
        .map_err(|e| CliError::Io(format!("write resolved config: {e}")))?;
    Ok(name)
}

pub fn cmd_generate(cfg: &RunConfig, out_root: &Path, ex: Exec) -> Result<()> {
    let dir = out_root.join("dataset");
    ensure_dir(&dir)?;
    let spec = cfg.spec()?;
    let (low, high) = cfg.init_box()?;
    let seed = cfg.sde.seed;
    let ds = simulate_trajectories(
        &spec,
        &low,
        &high,
        cfg.sde.n_traj,
        cfg.sde.len,
        cfg.sde.dt,
        mix_seed(seed, domain::DATA, 0),
        ex,
    )?;
    let store = build_pairs(&ds)?;

    let mut files = vec![PathBuf::from("trajectories.bin"), PathBuf::from("pairs.bin")];
    io::save_trajectories(dir.join("trajectories.bin"), &ds)?;
    io::save_pairs(dir.join("pairs.bin"), &store)?;
    if cfg.output.csv {
        io::write_trajectories_csv(dir.join("trajectories.csv"), &ds)?;
        files.push(PathBuf::from("trajectories.csv"));
    }
    files.push(write_resolved_config(&dir, cfg)?);
    write_manifest(&dir, "generate", seed, &files)?;
    println!(
        "generate: {} trajectories x {} steps (dim {}) -> {} pairs in {}",
        cfg.sde.n_traj,
        cfg.sde.len,
        spec.dim(),
        store.len(),
        dir.display()
    );
    Ok(())
}

fn load_pairs_checked(path: &Path) -> Result<sfml_core::dataset::PairStore> {
    if !path.exists() {
        return Err(CliError::MissingInput(format!(
            "dataset {} does not exist; run `sfml generate` first or pass --data",
            path.display()
        )));
    }
    Ok(io::load_pairs(path)?)
}

pub fn cmd_train(
    cfg: &RunConfig,
    out_root: &Path,
    data: Option<PathBuf>,
    dry_run: bool,
    deterministic: bool,
    ex: Exec,
) -> Result<()> {
    let mut tc = cfg.train_config(cfg.train.latent_dim);
    tc.deterministic = deterministic;
    tc.validate().map_err(|e| CliError::Config(e.to_string()))?;

    if dry_run {
        println!("config ok:\n{}", cfg.resolved()?.to_toml()?);
        return Ok(());
    }

    let data_path = data.unwrap_or_else(|| out_root.join("dataset").join("pairs.bin"));
    let store = load_pairs_checked(&data_path)?;

    let dir = out_root.join("train");
    ensure_dir(&dir)?;
    let (model, history) = train(&store, &tc, ex).map_err(|e| match e {
        CoreError::TrainingDiverged { .. } => CliError::Training(e.to_string()),
        other => other.into(),
    })?;

    let mut files = vec![PathBuf::from("checkpoint.bin"), PathBuf::from("history.csv")];
    io::save_checkpoint(dir.join("checkpoint.bin"), &model, &tc.config_hash())?;
    io::write_history_csv(dir.join("history.csv"), &history)?;
    if cfg.output.batch_plan {
        let plan = sfml_core::dataset::resample_batches(
            &store,
            tc.n_batches,
            tc.batch_size,
            mix_seed(tc.seed, domain::EPOCH, 0),
            ex,
        )?;
        io::write_batch_plan_csv(dir.join("batch_plan_epoch0.csv"), &plan)?;
        files.push(PathBuf::from("batch_plan_epoch0.csv"));
    }
    files.push(write_resolved_config(&dir, cfg)?);
    write_manifest(&dir, "train", tc.seed, &files)?;
    println!(
        "train: {} epochs, final mse {:.6e}, checkpoint {} (params sha256 {})",
        tc.epochs,
        history.final_mse(),
        dir.join("checkpoint.bin").display(),
        history.final_checksum
    );
    Ok(())
}

pub fn cmd_sweep(
    cfg: &RunConfig,
    out_root: &Path,
    data: Option<PathBuf>,
    max_nz: usize,
    deterministic: bool,
    ex: Exec,
) -> Result<()> {
    if max_nz == 0 {
        return Err(CliError::Config("--max-nz must be at least 1".into()));
    }
    let data_path = data.unwrap_or_else(|| out_root.join("dataset").join("pairs.bin"));
    let store = load_pairs_checked(&data_path)?;

    let dir = out_root.join("sweep");
    ensure_dir(&dir)?;
    let mut files = Vec::new();
    let mut rows = Vec::with_capacity(max_nz);
    for nz in 1..=max_nz {
        let mut tc = cfg.train_config(nz);
        tc.deterministic = deterministic;
        tc.validate().map_err(|e| CliError::Config(e.to_string()))?;
        let (model, history) = train(&store, &tc, ex).map_err(|e| match e {
            CoreError::TrainingDiverged { .. } => CliError::Training(e.to_string()),
            other => other.into(),
        })?;
        let ckpt = format!("checkpoint_nz{nz}.bin");
        let hist = format!("history_nz{nz}.csv");
        io::save_checkpoint(dir.join(&ckpt), &model, &tc.config_hash())?;
        io::write_history_csv(dir.join(&hist), &history)?;
        files.push(PathBuf::from(ckpt));
        files.push(PathBuf::from(hist));
        println!("sweep nz={nz}: final mse {:.6e}", history.final_mse());
        rows.push(SweepRow {
            nz,
            mse: history.final_mse(),
        });
    }
    let report = report_from_rows(rows, cfg.train.drop_ratio);
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Other(format!("serialize sweep report: {e}")))?;
    std::fs::write(dir.join("sweep.json"), json.as_bytes())
        .map_err(|e| CliError::Io(format!("write sweep report: {e}")))?;
    files.push(PathBuf::from("sweep.json"));
    files.push(write_resolved_config(&dir, cfg)?);
    write_manifest(&dir, "sweep", cfg.sde.seed, &files)?;
    println!(
        "sweep: detected_dim = {}{}",
        report.detected_dim,
        if report.no_drop_observed {
            " (no drop observed)"
        } else {
            ""
        }
    );
    Ok(())
}

#[derive(Serialize)]
struct TerminalStats {
    time: f64,
    mean: Vec<f64>,
    std: Vec<f64>,
    n_samples: usize,
    n_excluded: usize,
}

impl TerminalStats {
    fn from(stats: &EnsembleStats) -> Self {
        let last = stats.times.len() - 1;
        TerminalStats {
            time: stats.times[last],
            mean: stats.mean.row(last).to_vec(),
            std: stats.std.row(last).to_vec(),
            n_samples: stats.n_samples,
            n_excluded: stats.n_excluded,
        }
    }
}

#[derive(Serialize)]
struct RecoveryMeta {
    mode: RecoveryMode,
    n_mc: usize,
    b_convention: &'static str,
}

#[derive(Serialize)]
struct EvalReport {
    x0: Vec<f64>,
    dt: f64,
    model_terminal: TerminalStats,
    reference_terminal: TerminalStats,
    latent_ks: Vec<f64>,
    deterministic_coordinates: Vec<bool>,
    recovery: RecoveryMeta,
    checkpoint_config_hash: String,
    files: Vec<String>,
}

pub fn cmd_evaluate(
    cfg: &RunConfig,
    out_root: &Path,
    model_path: Option<PathBuf>,
    ex: Exec,
) -> Result<()> {
    let ckpt_path = model_path.unwrap_or_else(|| out_root.join("train").join("checkpoint.bin"));
    if !ckpt_path.exists() {
        return Err(CliError::MissingInput(format!(
            "checkpoint {} does not exist; run `sfml train` first or pass --model",
            ckpt_path.display()
        )));
    }
    let (model, header) = io::load_checkpoint(&ckpt_path)?;
    let spec = cfg.spec()?;
    if model.dim != spec.dim() {
        return Err(CliError::Shape(format!(
            "checkpoint has state dimension {}, config sde \"{}\" has {}",
            model.dim,
            cfg.sde.name,
            spec.dim()
        )));
    }
    if (model.dt - cfg.sde.dt).abs() > 1e-12 {
        return Err(CliError::Shape(format!(
            "checkpoint was trained at dt = {}, config says {}",
            model.dt, cfg.sde.dt
        )));
    }
    let (low, high) = cfg.init_box()?;
    let x0 = cfg.eval_x0(&low, &high);
    if x0.len() != spec.dim() {
        return Err(CliError::Shape(format!(
            "eval.x0 must have {} entries, got {}",
            spec.dim(),
            x0.len()
        )));
    }
    let seed = cfg.sde.seed;
    let dir = out_root.join("eval");
    ensure_dir(&dir)?;

    let model_stats = rollout_ensemble(
        &model,
        &x0,
        cfg.eval.n_samples,
        cfg.eval.n_steps,
        mix_seed(seed, domain::ROLLOUT, 0),
        ex,
    )?;
    let ref_stats = reference_stats(
        &spec,
        &x0,
        cfg.eval.n_samples,
        cfg.eval.n_steps,
        cfg.sde.dt,
        mix_seed(seed, domain::ROLLOUT, 0),
        ex,
    )?;

    let mode = match cfg.eval.recovery.as_str() {
        "geometric" => RecoveryMode::Geometric,
        _ => RecoveryMode::Arithmetic,
    };
    let g = cfg.eval.grid_points;
    let glow = cfg.eval.grid_low.clone().unwrap_or_else(|| low.clone());
    let ghigh = cfg.eval.grid_high.clone().unwrap_or_else(|| high.clone());
    if glow.len() != spec.dim() || ghigh.len() != spec.dim() {
        return Err(CliError::Shape(format!(
            "grid endpoints must have {} entries",
            spec.dim()
        )));
    }
    let grid = Array2::from_shape_fn((g, spec.dim()), |(i, k)| {
        let t = if g > 1 { i as f64 / (g - 1) as f64 } else { 0.0 };
        glow[k] + (ghigh[k] - glow[k]) * t
    });
    let table = recover_drift_diffusion(
        &model,
        grid.view(),
        cfg.eval.n_mc,
        mode,
        mix_seed(seed, domain::RECOVERY, 0),
        ex,
    )?;

    let cond = conditional_samples(
        &model,
        &x0,
        cfg.eval.n_mc,
        mix_seed(seed, domain::CONDITIONAL, 0),
    )?;
    let det_flags = deterministic_coordinates(cond.samples.view(), model.dt);

    let ks = held_out_latent_ks(
        &model,
        &spec,
        &x0,
        cfg.eval.held_out,
        cfg.sde.dt,
        mix_seed(seed, domain::HELD_OUT, 0),
        ex,
    )?;

    let mut files = vec![
        PathBuf::from("ensemble.csv"),
        PathBuf::from("reference.csv"),
        PathBuf::from("drift_diffusion.csv"),
        PathBuf::from("conditional.csv"),
    ];
    io::write_ensemble_csv(dir.join("ensemble.csv"), &model_stats)?;
    io::write_ensemble_csv(dir.join("reference.csv"), &ref_stats)?;
    io::write_drift_diff_csv(dir.join("drift_diffusion.csv"), &table)?;
    io::write_conditional_csv(dir.join("conditional.csv"), &cond)?;

    let report = EvalReport {
        x0: x0.clone(),
        dt: cfg.sde.dt,
        model_terminal: TerminalStats::from(&model_stats),
        reference_terminal: TerminalStats::from(&ref_stats),
        latent_ks: ks.clone(),
        deterministic_coordinates: det_flags,
        recovery: RecoveryMeta {
            mode,
            n_mc: cfg.eval.n_mc,
            b_convention: "arithmetic: b_hat = std[y]/sqrt(dt); geometric: b_hat = std[y] unscaled",
        },
        checkpoint_config_hash: header.config_hash.clone(),
        files: files.iter().map(|f| f.display().to_string()).collect(),
    };
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::Other(format!("serialize eval report: {e}")))?;
    std::fs::write(dir.join("report.json"), json.as_bytes())
        .map_err(|e| CliError::Io(format!("write eval report: {e}")))?;
    files.push(PathBuf::from("report.json"));
    files.push(write_resolved_config(&dir, cfg)?);
    write_manifest(&dir, "evaluate", seed, &files)?;

    let last = model_stats.times.len() - 1;
    println!(
        "evaluate: terminal mean {:?} (reference {:?}), KS {:?} -> {}",
        model_stats.mean.row(last).to_vec(),
        ref_stats.mean.row(last).to_vec(),
        ks,
        dir.display()
    );
    Ok(())
}
