//! Subcommand implementations behind the `nn-subspaces` binary. Every
//! command resolves a config (file + `--set` overrides + `--seed`), runs one
//! experiment, and writes its outputs plus a write-once run manifest into
//! the run directory. Outputs are files; stdout carries a short summary.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{corrupt_gaussian, Dataset};
use crate::evaluation;
use crate::experiments;
use crate::net::{self, NetworkSpec};
use crate::report;
use crate::rng;
use crate::subspace::{Subspace, SubspaceKind};
use crate::trainer;
use crate::{checkpoint, Error, Result};

/// Environment variable naming the default output root (fallback `./runs`).
pub const OUT_ROOT_ENV: &str = "NN_SUBSPACES_OUT";

const STATS_BATCH: usize = 256;

#[derive(Debug, Parser)]
#[command(name = "nn-subspaces", version, about = "Train and evaluate subspaces of neural networks")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Run configuration file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Root seed, overriding `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory. Defaults to `<root>/<command>-<timestamp>-<seed>`
    /// where the root comes from NN_SUBSPACES_OUT or `./runs`.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,

    /// Config override `key.path=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Allow reusing an existing run directory.
    #[arg(long, global = true)]
    overwrite: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a subspace in a single run.
    Train,
    /// Accuracy and mirrored-ensemble sweep over a trained 1-D subspace.
    Sweep {
        /// Checkpoint (or run) directory to sweep.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Grid specification start:end:step (default from config).
        #[arg(long)]
        grid: Option<String>,
    },
    /// Instability analysis: shared prefix, forked training, path metrics.
    Instability,
    /// Loss/error grid on the plane through three subspace anchors.
    Plane {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Third anchor for two-endpoint subspaces (first endpoint of the
        /// given checkpoint).
        #[arg(long, value_name = "PATH")]
        third: Option<PathBuf>,
    },
    /// Train and evaluate the integral ensembling model.
    Integral {
        /// Finite-difference step (default from config: 0.1).
        #[arg(long)]
        epsilon: Option<f64>,
    },
    /// Pairwise endpoint geometry of a checkpoint.
    Geometry {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Summary evaluation of a checkpoint (accuracy, ensembles, ECE, TV).
    Eval {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
}

/// Write-once description of a run: everything needed to reproduce its
/// output files byte for byte.
#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub artifact_version: String,
    pub dataset_fingerprint: Option<String>,
    pub checkpoints: Vec<String>,
    pub metrics: Vec<String>,
    pub config: RunConfig,
}

pub const MANIFEST_NAME: &str = "manifest.toml";

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Train => "train",
        Command::Sweep { .. } => "sweep",
        Command::Instability => "instability",
        Command::Plane { .. } => "plane",
        Command::Integral { .. } => "integral",
        Command::Geometry { .. } => "geometry",
        Command::Eval { .. } => "eval",
    }
}

/// Entry point used by the binary and by tests.
pub fn run_from<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)
        .map_err(|e| Error::Input(format!("argument error:\n{e}")))?;
    run(cli)
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("train.seed={seed}"));
    }
    let config = match &cli.config {
        Some(path) => RunConfig::load(path, &overrides)?,
        None => RunConfig::from_toml("", &overrides)?,
    };

    let run_id = format!(
        "{}-{}",
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        config.train.seed
    );
    let name = command_name(&cli.command);
    let out_dir = match &cli.out_dir {
        Some(dir) => dir.clone(),
        None => {
            let root = std::env::var(OUT_ROOT_ENV).unwrap_or_else(|_| "runs".to_string());
            Path::new(&root).join(format!("{name}-{run_id}"))
        }
    };
    if out_dir.join(MANIFEST_NAME).exists() && !cli.overwrite {
        return Err(Error::Input(format!(
            "run directory {} already holds a manifest; pass --overwrite to replace it",
            out_dir.display()
        )));
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;

    let mut manifest = RunManifest {
        run_id,
        command: name.to_string(),
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        dataset_fingerprint: None,
        checkpoints: Vec::new(),
        metrics: Vec::new(),
        config: config.clone(),
    };

    match &cli.command {
        Command::Train => cmd_train(&config, &out_dir, &mut manifest)?,
        Command::Sweep { checkpoint, grid } => {
            cmd_sweep(&config, &out_dir, checkpoint, grid.as_deref(), &mut manifest)?
        }
        Command::Instability => cmd_instability(&config, &out_dir, &mut manifest)?,
        Command::Plane { checkpoint, third } => {
            cmd_plane(&config, &out_dir, checkpoint, third.as_deref(), &mut manifest)?
        }
        Command::Integral { epsilon } => cmd_integral(&config, &out_dir, *epsilon, &mut manifest)?,
        Command::Geometry { checkpoint } => cmd_geometry(&out_dir, checkpoint, &mut manifest)?,
        Command::Eval { checkpoint } => cmd_eval(&config, &out_dir, checkpoint, &mut manifest)?,
    }

    let resolved = out_dir.join("config_resolved.toml");
    std::fs::write(&resolved, config.to_toml()?)
        .map_err(|e| Error::io(resolved.display().to_string(), e))?;
    let manifest_text = toml::to_string(&manifest)
        .map_err(|e| Error::ConfigFile(format!("manifest serialization failed: {e}")))?;
    let manifest_path = out_dir.join(MANIFEST_NAME);
    std::fs::write(&manifest_path, manifest_text)
        .map_err(|e| Error::io(manifest_path.display().to_string(), e))?;
    Ok(())
}

fn load_and_check(
    config: &RunConfig,
    path: &Path,
    train: &Dataset,
) -> Result<(NetworkSpec, Subspace)> {
    let _ = config;
    let (spec, subspace) = checkpoint::load_subspace(path)?;
    if spec.input_dim() != train.dim() || spec.num_classes() != train.num_classes() {
        return Err(Error::Config(format!(
            "checkpoint network ({}d, {} classes) does not match the configured dataset ({}d, {} classes)",
            spec.input_dim(),
            spec.num_classes(),
            train.dim(),
            train.num_classes()
        )));
    }
    Ok((spec, subspace))
}

fn cmd_train(config: &RunConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let (train, test) = config.build_datasets()?;
    manifest.dataset_fingerprint = Some(train.fingerprint());
    let spec = config.build_network(&train)?;
    let kind = config.subspace.resolve()?;

    let every = config.output.checkpoint_every;
    let (subspace, log) =
        trainer::train_run_with(&spec, &train, kind, &config.train, |epoch, subspace, _| {
            if every > 0 && (epoch + 1) % every == 0 {
                let dir = out.join(format!("checkpoint_epoch_{epoch}"));
                checkpoint::save_subspace(&dir, &spec, subspace)?;
            }
            Ok(())
        })?;

    let ckpt_dir = out.join("checkpoint");
    checkpoint::save_subspace(&ckpt_dir, &spec, &subspace)?;
    manifest.checkpoints.push("checkpoint".to_string());

    report::write_metrics_jsonl(&out.join("metrics.jsonl"), &log.epochs)?;
    report::write_timings_jsonl(&out.join("timing.jsonl"), &log.timings)?;
    manifest.metrics.push("metrics.jsonl".to_string());

    // quick test-set readout for the log (not a metric file)
    let center = subspace.eval_point(&subspace.center_coord())?;
    let stats = net::recompute_bn_stats(&spec, &center, &train, STATS_BATCH)?;
    let test_acc = evaluation::accuracy(&spec, &center, &stats, &test)?;
    println!("trained {kind} for {} epochs; center test accuracy {test_acc:.4}", config.train.epochs);
    if subspace.num_endpoints() >= 2 {
        let g = subspace.geometry_stats()?;
        for p in &g.pairs {
            println!("geometry: pair ({}, {}) l2 {:.4} cos2 {:.6}", p.i, p.j, p.l2, p.cos2);
        }
        println!("geometry: avg l2 {:.4} avg cos2 {:.6}", g.avg_l2, g.avg_cos2);
    }
    Ok(())
}

fn cmd_sweep(
    config: &RunConfig,
    out: &Path,
    ckpt: &Path,
    grid: Option<&str>,
    manifest: &mut RunManifest,
) -> Result<()> {
    let (train, test) = config.build_datasets()?;
    manifest.dataset_fingerprint = Some(train.fingerprint());
    let (spec, subspace) = load_and_check(config, ckpt, &train)?;
    if matches!(subspace.kind(), SubspaceKind::Simplex { .. }) {
        return Err(Error::Input(
            "sweep needs a one-dimensional subspace (line or bezier1)".into(),
        ));
    }
    let alphas = report::parse_grid(grid.unwrap_or(&config.sweep.grid))?;
    let rows = evaluation::sweep_with_ensembles(
        &spec,
        &subspace,
        &alphas,
        &train,
        &test,
        config.train.loss,
    )?;
    report::write_sweep_csv(&out.join("sweep.csv"), &rows)?;
    manifest.metrics.push("sweep.csv".to_string());
    println!(
        "swept {} points; endpoint accuracies {:.4}/{:.4}, best ensemble {:.4}",
        rows.len(),
        rows.first().map(|r| r.accuracy).unwrap_or(f64::NAN),
        rows.last().map(|r| r.accuracy).unwrap_or(f64::NAN),
        rows.iter().map(|r| r.ensemble_accuracy).fold(f64::NEG_INFINITY, f64::max),
    );
    Ok(())
}

fn cmd_instability(config: &RunConfig, out: &Path, manifest: &mut RunManifest) -> Result<()> {
    let (train, test) = config.build_datasets()?;
    manifest.dataset_fingerprint = Some(train.fingerprint());
    let spec = config.build_network(&train)?;
    let setup = config.instability_setup()?;
    let result = experiments::instability_run(&spec, &train, &test, &setup, &config.train)?;
    report::write_instability_csv(&out.join("instability.csv"), &result)?;
    manifest.metrics.push("instability.csv".to_string());
    println!(
        "instability k={} forks={}: weight average {:.4}, output ensemble {:.4}",
        result.k, result.num_models, result.weight_average_accuracy, result.output_ensemble_accuracy
    );
    Ok(())
}

fn cmd_plane(
    config: &RunConfig,
    out: &Path,
    ckpt: &Path,
    third: Option<&Path>,
    manifest: &mut RunManifest,
) -> Result<()> {
    let (train, test) = config.build_datasets()?;
    manifest.dataset_fingerprint = Some(train.fingerprint());
    let (spec, subspace) = load_and_check(config, ckpt, &train)?;
    let endpoints = subspace.endpoints();
    let w3 = if endpoints.len() >= 3 {
        endpoints[2].clone()
    } else if let Some(third_path) = third {
        let (third_spec, third_subspace) = checkpoint::load_subspace(third_path)?;
        if third_spec != spec {
            return Err(Error::Config(
                "third-anchor checkpoint was trained with a different network".into(),
            ));
        }
        third_subspace.endpoints()[0].clone()
    } else {
        return Err(Error::Input(
            "two-endpoint subspace: pass --third with another checkpoint to span a plane".into(),
        ));
    };
    let grid = evaluation::plane_grid(
        &spec,
        &endpoints[0],
        &endpoints[1],
        &w3,
        &train,
        &test,
        config.train.loss,
        config.plane.resolution,
        config.plane.margin,
    )?;
    report::write_plane_csv(&out.join("plane.csv"), &out.join("plane_points.csv"), &grid)?;
    manifest.metrics.push("plane.csv".to_string());
    manifest.metrics.push("plane_points.csv".to_string());
    println!(
        "plane grid {}x{}; projected anchors {:?}",
        grid.xs.len(),
        grid.ys.len(),
        grid.projected
    );
    Ok(())
}

fn cmd_integral(
    config: &RunConfig,
    out: &Path,
    epsilon: Option<f64>,
    manifest: &mut RunManifest,
) -> Result<()> {
    let (train, test) = config.build_datasets()?;
    manifest.dataset_fingerprint = Some(train.fingerprint());
    let spec = config.build_network(&train)?;
    let eps = epsilon.unwrap_or(config.integral.epsilon);
    let state = experiments::integral_train(&spec, &train, &config.train, eps)?;

    let ckpt_dir = out.join("checkpoint");
    checkpoint::save_subspace(&ckpt_dir, &spec, &state.line)?;
    manifest.checkpoints.push("checkpoint".to_string());

    // closed-form ensemble prediction: g at the line's far endpoint
    let theta1 = state.line.eval_point_unclamped(1.0)?;
    let stats = net::recompute_bn_stats(&spec, &theta1, &train, STATS_BATCH)?;
    let integral_acc = evaluation::accuracy(&spec, &theta1, &stats, &test)?;

    let mut rows = vec![
        ("epsilon".to_string(), eps),
        ("integral_accuracy".to_string(), integral_acc),
    ];
    for (i, endpoint) in state.line.endpoints().iter().enumerate() {
        let s = net::recompute_bn_stats(&spec, endpoint, &train, STATS_BATCH)?;
        rows.push((
            format!("endpoint_{i}_accuracy"),
            evaluation::accuracy(&spec, endpoint, &s, &test)?,
        ));
    }
    let mut text = String::from("metric,value\n");
    for (name, value) in &rows {
        text.push_str(&format!("{name},{value}\n"));
    }
    std::fs::write(out.join("integral.csv"), text)
        .map_err(|e| Error::io(out.join("integral.csv").display().to_string(), e))?;
    manifest.metrics.push("integral.csv".to_string());
    println!("integral model (epsilon {eps}): ensemble accuracy {integral_acc:.4}");
    Ok(())
}

fn cmd_geometry(out: &Path, ckpt: &Path, manifest: &mut RunManifest) -> Result<()> {
    let (_, subspace) = checkpoint::load_subspace(ckpt)?;
    let stats = subspace.geometry_stats()?;
    report::write_geometry_csv(&out.join("geometry.csv"), &stats)?;
    manifest.metrics.push("geometry.csv".to_string());
    println!("geometry: avg l2 {:.4} avg cos2 {:.6}", stats.avg_l2, stats.avg_cos2);
    Ok(())
}

fn cmd_eval(config: &RunConfig, out: &Path, ckpt: &Path, manifest: &mut RunManifest) -> Result<()> {
    let (train, test) = config.build_datasets()?;
    manifest.dataset_fingerprint = Some(train.fingerprint());
    let (spec, subspace) = load_and_check(config, ckpt, &train)?;
    let report_data = evaluation::evaluate_subspace(
        &spec,
        &subspace,
        &train,
        &test,
        config.train.loss,
        config.eval.ece_bins,
    )?;

    let mut extra = Vec::new();
    if let SubspaceKind::Simplex { m } = subspace.kind() {
        if m >= 2 && config.eval.ensemble_members > 0 {
            let mut rng = rng::stream(config.train.seed, "ensemble");
            let acc = evaluation::random_simplex_ensemble(
                &spec,
                &subspace,
                &train,
                &test,
                config.eval.ensemble_members,
                &mut rng,
            )?;
            extra.push((
                format!("random_ensemble_{}", config.eval.ensemble_members),
                acc,
            ));
        }
    }
    if config.eval.corruption_severity > 0.0 {
        let corrupted = corrupt_gaussian(&test, config.eval.corruption_severity, config.data_seed())?;
        let center = subspace.eval_point(&subspace.center_coord())?;
        let stats = net::recompute_bn_stats(&spec, &center, &train, STATS_BATCH)?;
        let clean = report_data.midpoint_accuracy;
        let corrupted_acc = evaluation::accuracy(&spec, &center, &stats, &corrupted)?;
        extra.push(("corrupted_accuracy".to_string(), corrupted_acc));
        extra.push((
            "relative_change".to_string(),
            evaluation::relative_change(clean, corrupted_acc)?,
        ));
    }

    report::write_eval_csv(&out.join("eval.csv"), &report_data, &extra)?;
    manifest.metrics.push("eval.csv".to_string());
    println!(
        "eval: midpoint accuracy {:.4}, ece {:.4}",
        report_data.midpoint_accuracy, report_data.ece
    );
    Ok(())
}
