//! Command-line front end.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 degenerate
//! metric, 4 I/O or file-format error.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, make_splits, read_any, write_csv, write_dump};
use crate::error::{Error, Result};
use crate::estimators::{Method, MethodConfig};
use crate::harness::{emit_report, read_results, run_protocol_with, train_method, ProtocolConfig, Scorer, TrainedModel};
use crate::knn::Metric;
use crate::metrics::{human_alignment, mixed_r_auroc, ood_auroc, r_auroc, recall_at_1_with, EvalRecord, MetricReport, Origin};

#[derive(Debug, Parser)]
#[command(name = "urlbench", version, about = "Zero-shot uncertainty benchmark for representation learners")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset and its class splits.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain one method on the upstream classes and save a checkpoint.
    Train {
        #[arg(long)]
        method: Method,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lr: Option<f64>,
        /// Inverse temperature.
        #[arg(long)]
        t: Option<f64>,
        #[arg(long)]
        b: Option<f64>,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long)]
        warmup_kappa: bool,
        #[arg(long)]
        spectral_norm: bool,
    },
    /// Write a dump of embeddings and uncertainties for one split.
    Embed {
        #[arg(long)]
        ckpt: PathBuf,
        /// upstream-train, upstream-eval, or down<k>-train|val|test.
        #[arg(long)]
        split: String,
        /// Output path; a `.csv` extension selects the text format.
        #[arg(long)]
        out: PathBuf,
        /// Uncertainty read-out; defaults to the method's first.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Score a dump: R@1 and R-AUROC, plus OOD analyses with a second dump.
    Eval {
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        ood_dump: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value = "cosine", value_parser = parse_metric)]
        metric: Metric,
        #[arg(long, default_value_t = 0)]
        mixed_seed: u64,
    },
    /// Run search, replication, baselines and analyses; write all reports.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Re-render the report files from `results.json` in a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    match s {
        "cosine" => Ok(Metric::Cosine),
        "euclidean" => Ok(Metric::Euclidean),
        _ => Err(format!("unknown metric '{s}' (cosine | euclidean)")),
    }
}

/// A trained model plus everything needed to regenerate its data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub protocol: ProtocolConfig,
    pub model: TrainedModel,
}

fn load_config(path: Option<&Path>) -> Result<ProtocolConfig> {
    match path {
        Some(p) => ProtocolConfig::from_file(p),
        None => Ok(ProtocolConfig::default()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Algorithm-1 report for a dump, with OOD-AUROC and mixed R-AUROC when an
/// out-of-distribution dump is given.
pub fn eval_records(records: &[EvalRecord], ood: Option<&[EvalRecord]>, metric: Metric, mixed_seed: u64) -> Result<MetricReport> {
    let (r1, _) = recall_at_1_with(records, metric)?;
    let mut report = MetricReport {
        method: "dump".into(),
        n: records.len(),
        r_at_1: r1,
        r_auroc: Some(r_auroc(records)?),
        ..MetricReport::default()
    };
    if records.iter().all(|r| r.soft_labels.is_some()) {
        report.human_alignment = human_alignment(records).ok();
    }
    if let Some(ood) = ood {
        report.ood_auroc = Some(ood_auroc(records, ood)?);
        report.mixed_r_auroc = Some(mixed_r_auroc(records, ood, mixed_seed)?);
    }
    Ok(report)
}

fn report_csv(r: &MetricReport) -> String {
    let f = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.6}"));
    format!(
        "n,r_at_1,r_auroc,ood_auroc,mixed_r_auroc,human_alignment\n{},{:.6},{},{},{},{}\n",
        r.n,
        r.r_at_1,
        f(r.r_auroc),
        f(r.ood_auroc),
        f(r.mixed_r_auroc),
        f(r.human_alignment)
    )
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let ds = generate_synthetic(&cfg.synthetic)?;
            let splits = make_splits(&ds, &cfg.splits, cfg.search_seed)?;
            write_text(&out.join("dataset.json"), &serde_json::to_string(&ds)?)?;
            write_text(&out.join("splits.json"), &serde_json::to_string_pretty(&splits)?)?;
            write_text(&out.join("config.toml"), &cfg.to_toml_string()?)?;
            println!("{} samples, {} classes, splits: {}", ds.samples.len(), ds.config.n_classes, splits.names().join(" "));
        }
        Command::Train { method, config, out, seed, lr, t, b, lambda, dropout, warmup_kappa, spectral_norm } => {
            let cfg = load_config(config.as_deref())?;
            let mut mc = MethodConfig::new(method).with_seed(seed);
            mc.lr = lr.unwrap_or(mc.lr);
            mc.t = t.unwrap_or(mc.t);
            mc.b = b.unwrap_or(mc.b);
            mc.lambda = lambda.unwrap_or(mc.lambda);
            mc.dropout_rate = dropout.unwrap_or(mc.dropout_rate);
            mc.warmup_kappa = warmup_kappa;
            mc.spectral_norm = spectral_norm;
            mc.validate()?;
            let ds = generate_synthetic(&cfg.synthetic)?;
            let splits = make_splits(&ds, &cfg.splits, cfg.search_seed)?;
            let model = train_method(&mc, &cfg.training, &ds, &splits.upstream_train)?;
            splits.audit_pretraining(&ds, &model.consumed_ids)?;
            println!(
                "{}: {} epochs, final loss {}",
                mc.describe(),
                model.epochs_run,
                model.final_loss.map_or_else(|| "n/a".into(), |l| format!("{l:.6}"))
            );
            write_text(&out, &serde_json::to_string(&Checkpoint { protocol: cfg, model })?)?;
        }
        Command::Embed { ckpt, split, out, variant } => {
            let ck = load_checkpoint(&ckpt)?;
            let ds = generate_synthetic(&ck.protocol.synthetic)?;
            let splits = make_splits(&ds, &ck.protocol.splits, ck.protocol.search_seed)?;
            let indices = splits.select(&split)?;
            let method = ck.model.encoder.method();
            let kind = match &variant {
                None => method.variants()[0],
                Some(v) => *method
                    .variants()
                    .iter()
                    .find(|k| k.id() == v)
                    .ok_or_else(|| Error::Config(format!("{method} has no variant '{v}'")))?,
            };
            let origin = if split.starts_with("upstream") { Origin::Upstream } else { Origin::Downstream };
            let samples: Vec<_> = indices.iter().map(|&i| &ds.samples[i]).collect();
            let scorer = Scorer::Model { encoder: &ck.model.encoder, kind, seed: ck.model.encoder.config.seed };
            let records = scorer.records(&samples, origin)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            if is_csv(&out) {
                write_csv(&records, &out)?;
            } else {
                write_dump(&records, &out)?;
            }
            println!("{} records from {split} written to {}", records.len(), out.display());
        }
        Command::Eval { dump, ood_dump, report, metric, mixed_seed } => {
            let records = read_any(&dump)?;
            let ood = ood_dump.as_deref().map(read_any).transpose()?;
            let mut r = eval_records(&records, ood.as_deref(), metric, mixed_seed)?;
            r.dataset = dump.display().to_string();
            let json = serde_json::to_string_pretty(&r)?;
            println!("{json}");
            if let Some(dir) = report {
                write_text(&dir.join("eval.json"), &(json + "\n"))?;
                write_text(&dir.join("eval.csv"), &report_csv(&r))?;
            }
        }
        Command::Benchmark { config, out, quiet } => {
            let cfg = load_config(config.as_deref())?;
            let result = run_protocol_with(&cfg, &|line| {
                if !quiet {
                    eprintln!("{line}");
                }
            })?;
            for p in emit_report(&result, &out)? {
                println!("{}", p.display());
            }
        }
        Command::Report { input } => {
            let result = read_results(&input.join("results.json"))?;
            for p in emit_report(&result, &input)? {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

/// Parses the process arguments, runs the command, and returns the exit code.
pub fn main() -> i32 {
    match run(Cli::parse()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
