//! `saln`: train, attack, analyze and report on gradient-regularized ReLU
//! classifiers.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use config::{resolve_attacks, resolve_dataset, resolve_model, FileConfig};
use saln_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use saln_core::error::{Error, Result};
use saln_core::records::{
    aggregate, analyze_model, fmt_f64, records_from_csv, records_to_csv, summaries_to_csv,
    summaries_to_json, summaries_to_long_csv, SweepSummary,
};
use saln_core::training::{geometric_span, lambda_sweep, train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "saln",
    version,
    about = "Saliency-alignment and adversarial-robustness experiments on small ReLU networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override for model init / training.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Dataset kind: mnist (IDX directory) or blobs.
    #[arg(long)]
    dataset: Option<String>,
    /// Directory with train/t10k IDX files for --dataset mnist.
    #[arg(long)]
    mnist_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write a checkpoint plus its history.
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Regularization weight override.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Train one model per lambda from identical initialization.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated ascending lambda list, e.g. 0,0.3,1,3.
        #[arg(long, conflicts_with = "lambda_span")]
        lambda: Option<String>,
        /// Geometric grid lo:hi:points, e.g. 10:1.8e5:5.
        #[arg(long)]
        lambda_span: Option<String>,
    },
    /// Run the configured attacks against a checkpoint.
    Attack {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated subset of grad,pgd,cw.
        #[arg(long)]
        attacks: Option<String>,
        /// Number of validation samples.
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Full per-sample analysis of a checkpoint into a records CSV.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        attacks: Option<String>,
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
    /// Aggregate records CSVs into summary and plot-ready tables.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma-separated records CSV paths (from `analyze`).
        #[arg(long, required = true)]
        records: String,
    },
}

/// Sidecar metadata written next to records so `report` can label models.
#[derive(Debug, Serialize, Deserialize, Default)]
struct RecordsMeta {
    model: String,
    lambda: Option<f64>,
    penalty: Option<String>,
    normalization: Option<String>,
    dataset: Option<String>,
    attacks: Option<serde_json::Value>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's rendered message includes usage.
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, lambda } => cmd_train(&common, lambda),
        Command::Sweep {
            common,
            lambda,
            lambda_span,
        } => cmd_sweep(&common, lambda.as_deref(), lambda_span.as_deref()),
        Command::Attack {
            common,
            checkpoint,
            attacks,
            samples,
        } => cmd_attack(&common, &checkpoint, attacks.as_deref(), samples),
        Command::Analyze {
            common,
            checkpoint,
            attacks,
            samples,
        } => cmd_analyze(&common, &checkpoint, attacks.as_deref(), samples),
        Command::Report { common, records } => cmd_report(&common, &records),
    }
}

fn train_config(file: &FileConfig, common: &CommonArgs, lambda: Option<f64>) -> TrainConfig {
    let mut cfg = file.train.clone().unwrap_or_default();
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(l) = lambda {
        cfg.lambda = l;
    }
    cfg
}

fn cmd_train(common: &CommonArgs, lambda: Option<f64>) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let data = resolve_dataset(&file, common.dataset.as_deref(), common.mnist_dir.as_deref())?;
    let net = resolve_model(&file, &data, common.seed)?;
    let cfg = train_config(&file, common, lambda);

    let (trained, history) = train(&net, &data.split, &cfg)?;
    std::fs::create_dir_all(&common.out_dir)?;
    let ckpt_path = common.out_dir.join("model.saln");
    let mut meta = CheckpointMeta::for_network(&trained, cfg.seed);
    meta.lambda = Some(cfg.lambda);
    meta.penalty = Some(cfg.penalty.name().to_string());
    meta.normalization = Some(data.normalization);
    save_checkpoint(&trained, &meta, &ckpt_path)?;

    let mut hist_csv = String::from("epoch,train_loss,penalty,val_loss,val_accuracy,learning_rate\n");
    for (i, e) in history.epochs.iter().enumerate() {
        hist_csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i,
            fmt_f64(e.train_loss),
            fmt_f64(e.penalty),
            fmt_f64(e.val_loss),
            fmt_f64(e.val_accuracy),
            fmt_f64(e.learning_rate),
        ));
    }
    std::fs::write(common.out_dir.join("history.csv"), hist_csv)?;

    let final_acc = history.epochs.last().map(|e| e.val_accuracy).unwrap_or(0.0);
    println!(
        "trained lambda={} epochs={} val_acc={:.4} checkpoint={}",
        cfg.lambda,
        history.epochs.len(),
        final_acc,
        ckpt_path.display()
    );
    Ok(())
}

fn parse_lambda_list(lambda: Option<&str>, span: Option<&str>) -> Result<Vec<f64>> {
    match (lambda, span) {
        (Some(list), None) => list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidConfig(format!("bad lambda '{s}'")))
            })
            .collect(),
        (None, Some(spec)) => {
            let parts: Vec<&str> = spec.split(':').collect();
            if parts.len() != 3 {
                return Err(Error::InvalidConfig(
                    "--lambda-span expects lo:hi:points".into(),
                ));
            }
            let lo: f64 = parts[0]
                .parse()
                .map_err(|_| Error::InvalidConfig("bad span lo".into()))?;
            let hi: f64 = parts[1]
                .parse()
                .map_err(|_| Error::InvalidConfig("bad span hi".into()))?;
            let n: usize = parts[2]
                .parse()
                .map_err(|_| Error::InvalidConfig("bad span points".into()))?;
            geometric_span(lo, hi, n)
        }
        _ => Err(Error::InvalidConfig(
            "sweep needs exactly one of --lambda or --lambda-span".into(),
        )),
    }
}

fn cmd_sweep(common: &CommonArgs, lambda: Option<&str>, span: Option<&str>) -> Result<()> {
    let lambdas = parse_lambda_list(lambda, span)?;
    let file = FileConfig::load(common.config.as_deref())?;
    let data = resolve_dataset(&file, common.dataset.as_deref(), common.mnist_dir.as_deref())?;
    let net = resolve_model(&file, &data, common.seed)?;
    let cfg = train_config(&file, common, None);

    std::fs::create_dir_all(&common.out_dir)?;
    let entries = lambda_sweep(
        &net,
        &data.split,
        &cfg,
        &lambdas,
        Some(&common.out_dir),
        Some(data.normalization),
    )?;
    for entry in &entries {
        match (&entry.checkpoint, &entry.error) {
            (Some(path), None) => {
                let acc = entry
                    .history
                    .as_ref()
                    .and_then(|h| h.epochs.last())
                    .map(|e| e.val_accuracy)
                    .unwrap_or(0.0);
                println!(
                    "lambda={} val_acc={:.4} checkpoint={}",
                    entry.lambda,
                    acc,
                    path.display()
                );
            }
            (_, Some(err)) => println!("lambda={} FAILED: {err}", entry.lambda),
            (None, None) => println!("lambda={} trained (not persisted)", entry.lambda),
        }
    }
    Ok(())
}

fn cmd_attack(
    common: &CommonArgs,
    checkpoint: &Path,
    attacks: Option<&str>,
    samples: usize,
) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let data = resolve_dataset(&file, common.dataset.as_deref(), common.mnist_dir.as_deref())?;
    let (net, _) = load_checkpoint(checkpoint)?;
    let cfgs = resolve_attacks(&file, attacks, data.is_image)?;

    let n = samples.min(data.split.validation.len());
    let mut csv =
        String::from("sample_index,attack,success,norm,adversarial_class,forwards,gradients\n");
    for i in 0..n {
        let x = data.split.validation.sample(i);
        let (_, results) = saln_core::attacks::empirical_robustness(&net, x, &cfgs)?;
        for r in results {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                i,
                r.kind.name(),
                r.success,
                r.norm.map(fmt_f64).unwrap_or_default(),
                r.adversarial_class.map(|c| c.to_string()).unwrap_or_default(),
                r.queries.forwards,
                r.queries.gradients,
            ));
        }
    }
    std::fs::create_dir_all(&common.out_dir)?;
    let path = common.out_dir.join("attacks.csv");
    std::fs::write(&path, csv)?;
    println!("attacked {n} samples -> {}", path.display());
    Ok(())
}

fn cmd_analyze(
    common: &CommonArgs,
    checkpoint: &Path,
    attacks: Option<&str>,
    samples: usize,
) -> Result<()> {
    let file = FileConfig::load(common.config.as_deref())?;
    let data = resolve_dataset(&file, common.dataset.as_deref(), common.mnist_dir.as_deref())?;
    let (net, meta) = load_checkpoint(checkpoint)?;
    let cfgs = resolve_attacks(&file, attacks, data.is_image)?;

    let records = analyze_model(&net, &data.split.validation, &cfgs, samples)?;
    std::fs::create_dir_all(&common.out_dir)?;
    let stem = checkpoint
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("model");
    let records_path = common.out_dir.join(format!("{stem}.records.csv"));
    std::fs::write(&records_path, records_to_csv(&records))?;

    let attacks_json = serde_json::to_value(
        cfgs.iter()
            .map(|(k, c)| (k.name().to_string(), format!("{c:?}")))
            .collect::<Vec<_>>(),
    )?;
    let sidecar = RecordsMeta {
        model: stem.to_string(),
        lambda: meta.lambda,
        penalty: meta.penalty.clone(),
        normalization: meta.normalization.map(|n| n.name().to_string()),
        dataset: Some(data.description.clone()),
        attacks: Some(attacks_json),
    };
    let meta_path = common.out_dir.join(format!("{stem}.records.meta.json"));
    std::fs::write(&meta_path, serde_json::to_string_pretty(&sidecar)?)?;

    println!(
        "analyzed {} samples -> {}",
        records.len(),
        records_path.display()
    );
    Ok(())
}

fn cmd_report(common: &CommonArgs, records_list: &str) -> Result<()> {
    let mut summaries: Vec<SweepSummary> = Vec::new();
    for path_str in records_list.split(',') {
        let path = PathBuf::from(path_str.trim());
        let text = std::fs::read_to_string(&path)?;
        let records = records_from_csv(&text)?;
        let stem = path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("records")
            .trim_end_matches(".csv")
            .trim_end_matches(".records")
            .to_string();
        // Sidecar metadata (written by `analyze`) supplies the lambda label.
        let meta_path = path.with_extension("meta.json");
        let meta: RecordsMeta = match std::fs::read_to_string(&meta_path) {
            Ok(text) => serde_json::from_str(&text)?,
            Err(_) => RecordsMeta {
                model: stem.clone(),
                ..RecordsMeta::default()
            },
        };
        summaries.push(aggregate(&records, meta.lambda, &meta.model)?);
    }

    std::fs::create_dir_all(&common.out_dir)?;
    std::fs::write(common.out_dir.join("summary.csv"), summaries_to_csv(&summaries))?;
    std::fs::write(
        common.out_dir.join("summary.json"),
        summaries_to_json(&summaries)?,
    )?;
    std::fs::write(
        common.out_dir.join("long.csv"),
        summaries_to_long_csv(&summaries),
    )?;
    println!(
        "reported {} model(s) -> {}",
        summaries.len(),
        common.out_dir.join("summary.csv").display()
    );
    Ok(())
}
