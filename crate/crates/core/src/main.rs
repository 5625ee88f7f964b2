//! Command-line experiment runner: train, attack, sensitivity.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};

use rbfinet::attack::{evaluate_under_attack, AttackConfig};
use rbfinet::checkpoint;
use rbfinet::config::{load_config, mean_stddev, ExperimentConfig, MetricsRecord, MetricsWriter};
use rbfinet::error::{Error, Result};
use rbfinet::loss;
use rbfinet::mnist::{load_idx, Dataset};
use rbfinet::network::{init_network, parse_geometry, Network};
use rbfinet::sensitivity::network_report;
use rbfinet::train::{train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "rbfinet",
    version,
    about = "Train and attack infinity-norm radial basis networks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train per a config file and write a checkpoint plus a metrics CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed(s) with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
        /// Override the config's geometry string.
        #[arg(long)]
        geometry: Option<String>,
    },
    /// Run the config's attack sweeps against a trained checkpoint.
    Attack {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Attack only the first N test examples.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Print a checkpoint's sensitivity report as JSON.
    Sensitivity {
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Train {
            config,
            seed,
            epochs,
            geometry,
        } => cmd_train(&config, seed, epochs, geometry),
        Cmd::Attack {
            config,
            checkpoint,
            limit,
        } => cmd_attack(&config, &checkpoint, limit),
        Cmd::Sensitivity { checkpoint } => cmd_sensitivity(&checkpoint),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" | "parse" => 2,
        "format" => 3,
        "integrity" => 4,
        "usage" => 5,
        "dimension" => 6,
        _ => 7,
    }
}

/// Load a data file pair, reporting a missing file as a format error naming
/// the path rather than a bare io error.
fn load_data(images: &Path, labels: &Path) -> Result<Dataset> {
    for p in [images, labels] {
        if !p.exists() {
            return Err(Error::Format {
                field: p.display().to_string(),
                msg: "data file not found".into(),
            });
        }
    }
    load_idx(images, labels)
}

/// Checkpoint path for one seed of a multi-seed run: model.ckpt -> model.s3.ckpt.
fn seed_checkpoint_path(base: &Path, seed: u64, multi: bool) -> PathBuf {
    if !multi {
        return base.to_path_buf();
    }
    let stem = base.file_stem().unwrap_or_default().to_string_lossy();
    let ext = base
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    base.with_file_name(format!("{stem}.s{seed}{ext}"))
}

/// The attack subcommand writes beside the training CSV: metrics.csv ->
/// metrics-attacks.csv, so a train/attack pair never clobbers itself.
fn attack_csv_path(base: &Path) -> PathBuf {
    let stem = base.file_stem().unwrap_or_default().to_string_lossy();
    let ext = base
        .extension()
        .map(|e| format!(".{}", e.to_string_lossy()))
        .unwrap_or_default();
    base.with_file_name(format!("{stem}-attacks{ext}"))
}

fn cmd_train(
    config: &Path,
    seed: Option<u64>,
    epochs: Option<usize>,
    geometry: Option<String>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(g) = geometry {
        parse_geometry(&g)?;
        cfg.geometry = g;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
        cfg.train.seeds = None;
    }
    let mut spec = parse_geometry(&cfg.geometry)?;
    spec.u_max = cfg.u_max;

    let train_data = load_data(&cfg.data.train_images, &cfg.data.train_labels)?;
    let mut test_data = load_data(&cfg.data.test_images, &cfg.data.test_labels)?;
    if let Some(n) = cfg.train.test_limit {
        test_data = test_data.head(n);
    }

    let seeds = cfg.train.seeds.clone().unwrap_or(vec![cfg.train.seed]);
    let multi = seeds.len() > 1;
    let mut writer = MetricsWriter::create(&cfg.output_csv)?;
    let mut final_accuracies = Vec::new();
    for &s in &seeds {
        let mut net = init_network(&spec, s);
        let tc = TrainConfig {
            epochs: cfg.train.epochs,
            batch_size: cfg.train.batch_size,
            loss: cfg.train.loss.unwrap_or(loss::default_loss(net.family())),
            gradient_mode: cfg.train.gradient_mode,
            regularizer_c: cfg.train.regularizer_c,
            seed: s,
        };
        let log = train(&mut net, &train_data, &test_data, &tc)?;
        for r in &log.records {
            eprintln!(
                "seed {s} epoch {}/{} loss {:.5} accuracy {:.4} bound {:.3} ({:.1}s)",
                r.epoch, tc.epochs, r.train_loss, r.test_accuracy, r.sensitivity_bound, r.wall_s
            );
            writer.write(&MetricsRecord {
                experiment_id: cfg.experiment_id.clone(),
                geometry: cfg.geometry.clone(),
                seed: s,
                record: format!("epoch:{}", r.epoch),
                epsilon: None,
                train_loss: Some(r.train_loss),
                accuracy: Some(r.test_accuracy),
                sensitivity_bound: Some(r.sensitivity_bound),
                wall_s: r.wall_s,
            })?;
        }
        if let Some(acc) = log.final_accuracy() {
            final_accuracies.push(acc);
        }
        checkpoint::save(&net, &seed_checkpoint_path(&cfg.checkpoint, s, multi))?;
    }
    if multi && !final_accuracies.is_empty() {
        let (mean, sd) = mean_stddev(&final_accuracies);
        for (name, v) in [("summary:mean", mean), ("summary:stddev", sd)] {
            writer.write(&MetricsRecord {
                experiment_id: cfg.experiment_id.clone(),
                geometry: cfg.geometry.clone(),
                seed: 0,
                record: name.into(),
                epsilon: None,
                train_loss: None,
                accuracy: Some(v),
                sensitivity_bound: None,
                wall_s: 0.0,
            })?;
        }
        eprintln!(
            "final accuracy over {} seeds: {mean:.4} +/- {sd:.4}",
            seeds.len()
        );
    }
    writer.finish()
}

fn cmd_attack(config: &Path, checkpoint_path: &Path, limit: Option<usize>) -> Result<()> {
    let cfg = load_config(config)?;
    let net = checkpoint::load(checkpoint_path)?;
    let mut want = parse_geometry(&cfg.geometry)?;
    want.u_max = cfg.u_max;
    if want.canonical() != net.spec.canonical() {
        return Err(Error::Integrity(format!(
            "checkpoint geometry {} does not match config geometry {}",
            net.spec.canonical(),
            want.canonical()
        )));
    }
    let test_data = load_data(&cfg.data.test_images, &cfg.data.test_labels)?;
    let mut writer = MetricsWriter::create(&attack_csv_path(&cfg.output_csv))?;
    run_attack_sweeps(&cfg, &net, &test_data, limit, &mut writer)?;
    writer.finish()
}

fn run_attack_sweeps(
    cfg: &ExperimentConfig,
    net: &Network,
    test_data: &Dataset,
    cli_limit: Option<usize>,
    writer: &mut MetricsWriter,
) -> Result<()> {
    let bound = network_report(net).network_bound;
    for section in &cfg.attacks {
        for &eps in &section.epsilons {
            let ac = AttackConfig {
                kind: section.kind,
                epsilon: eps,
                ifgsm_steps: section.ifgsm_steps,
                pgd_steps: section.pgd_steps,
                pgd_restarts: section.pgd_restarts,
                seed: section.seed,
                gradient_mode: section.gradient_mode,
            };
            let limit = cli_limit.or(section.limit);
            let started = Instant::now();
            let res = evaluate_under_attack(net, test_data, &ac, limit)?;
            let wall = started.elapsed().as_secs_f64();
            eprintln!(
                "{} eps {:.3} accuracy {:.4} (clean {:.4}, mean linf {:.4}, {:.1}s)",
                section.kind.name(),
                eps,
                res.attacked_accuracy,
                res.clean_accuracy,
                res.mean_linf,
                wall
            );
            writer.write(&MetricsRecord {
                experiment_id: cfg.experiment_id.clone(),
                geometry: cfg.geometry.clone(),
                seed: section.seed,
                record: format!("attack:{}", section.kind.name()),
                epsilon: Some(eps),
                train_loss: None,
                accuracy: Some(res.attacked_accuracy),
                sensitivity_bound: Some(bound),
                wall_s: wall,
            })?;
        }
    }
    Ok(())
}

fn cmd_sensitivity(checkpoint_path: &Path) -> Result<()> {
    let net = checkpoint::load(checkpoint_path)?;
    let rep = network_report(&net);
    let doc = serde_json::json!({
        "geometry": net.spec.canonical(),
        "u_max": net.spec.u_max,
        "per_layer": rep.per_layer,
        "network_bound": rep.network_bound,
    });
    println!("{}", serde_json::to_string_pretty(&doc).unwrap());
    Ok(())
}
