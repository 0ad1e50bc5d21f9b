use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use mrsnet::config::TrainConfig;
use mrsnet::data_model::{load_dataset, stratified_split, SplitFile};
use mrsnet::harness::{self, EvalOptions};
use mrsnet::metrics::split_table;
use mrsnet::synthetic::{self, SyntheticOptions};
use mrsnet::{checkpoint, Error};

/// Referring segmentation toolkit: dataset splits, training, evaluation and
/// ablation. Logs go to stderr as JSON lines; results go to stdout.
#[derive(Parser)]
#[command(name = "mrsnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitChoice {
    Val,
    Test,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Region-stratified train/val/test split of a manifest.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory manifest paths are relative to (default: the manifest's directory).
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long, default_value = "0.7,0.1,0.2")]
        ratios: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the split file here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on the split's train set; keeps the best-validation checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Split file produced by `split`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Score a checkpoint on a split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
        /// Split file (default: the one recorded in the checkpoint).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Probability threshold override.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Train and score the PSR/CSR on-off grid.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Write a synthetic dataset (PNG images, masks and a manifest).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        count: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Make every k-th sample a non-object sample.
        #[arg(long)]
        non_object_every: Option<usize>,
    },
}

fn parse_ratios(text: &str) -> mrsnet::Result<[f64; 3]> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("bad --ratios {text:?}: {e}")))?;
    parts
        .try_into()
        .map_err(|_| Error::Config(format!("--ratios needs three values, got {text:?}")))
}

fn print_stdout(text: &str) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .context("writing to stdout")
}

fn run(cmd: Command) -> anyhow::Result<()> {
    let mut log = std::io::stderr();
    match cmd {
        Command::Split {
            manifest,
            root,
            ratios,
            seed,
            out,
        } => {
            let ratios = parse_ratios(&ratios)?;
            let root = root.unwrap_or_else(|| {
                manifest
                    .parent()
                    .map(Path::to_path_buf)
                    .unwrap_or_default()
            });
            // Absolute paths keep the split file usable from any directory.
            let absolute = |p: &Path| {
                std::fs::canonicalize(p).with_context(|| format!("cannot resolve {}", p.display()))
            };
            let (manifest, root) = (absolute(&manifest)?, absolute(&root)?);
            let index = stratified_split(load_dataset(&root, &manifest)?, ratios, seed)?;
            let file = SplitFile {
                manifest,
                root,
                ratios,
                seed,
                splits: index.splits().clone(),
            };
            match out {
                Some(path) => {
                    file.write(&path)?;
                    let sizes: serde_json::Map<String, serde_json::Value> = file
                        .splits
                        .iter()
                        .map(|(k, v)| (k.clone(), json!(v.len())))
                        .collect();
                    print_stdout(&format!("{}\n", json!({"split_file": path, "sizes": sizes})))
                }
                None => print_stdout(&format!("{}\n", serde_json::to_string_pretty(&file)?)),
            }
        }
        Command::Train { config, data } => {
            let cfg = TrainConfig::read(&config)?;
            let dataset = SplitFile::read(&data)?.load()?;
            // Recorded in the checkpoint for `eval`, which may run elsewhere.
            let data = std::fs::canonicalize(&data).unwrap_or(data);
            let outcome = harness::train(&cfg, &dataset, Some(&data), &mut log)?;
            print_stdout(&format!(
                "{}\n",
                json!({"checkpoint": outcome.checkpoint, "steps": outcome.steps,
                       "final_loss": outcome.losses.last(), "best_val": outcome.best_val})
            ))
        }
        Command::Eval {
            ckpt,
            split,
            data,
            threshold,
        } => {
            let data = match data {
                Some(d) => d,
                None => checkpoint::read_meta(&ckpt)?.data.ok_or_else(|| {
                    Error::InvalidInput("checkpoint records no split file; pass --data".into())
                })?,
            };
            let dataset = SplitFile::read(&data)?.load()?;
            let opts = EvalOptions { threshold };
            let names: &[&str] = match split {
                SplitChoice::Val => &["val"],
                SplitChoice::Test => &["test"],
                SplitChoice::Both => &["val", "test"],
            };
            let mut reports = Vec::new();
            for name in names {
                let (report, _) = harness::evaluate(&ckpt, &dataset, name, &opts)?;
                reports.push((*name, report));
            }
            let json_reports: serde_json::Map<String, serde_json::Value> = reports
                .iter()
                .map(|(n, r)| (n.to_string(), json!(r)))
                .collect();
            let find = |n: &str| reports.iter().find(|(k, _)| *k == n).map(|(_, r)| r);
            let table = split_table(&[("MRSNet".to_string(), find("val"), find("test"))]);
            print_stdout(&format!("{}\n{table}", serde_json::Value::Object(json_reports)))
        }
        Command::Ablate { config, data } => {
            let cfg = TrainConfig::read(&config)?;
            let dataset = SplitFile::read(&data)?.load()?;
            let data = std::fs::canonicalize(&data).unwrap_or(data);
            let report = harness::ablate(&cfg, &dataset, Some(&data), &mut log)?;
            print_stdout(&format!("{}\n{}", serde_json::to_string(&report)?, report.table()))
        }
        Command::Synth {
            out,
            count,
            size,
            seed,
            non_object_every,
        } => {
            let opts = SyntheticOptions {
                non_object_every,
                ..SyntheticOptions::new(count, size, seed)
            };
            let manifest = synthetic::write_dataset(&out, &synthetic::generate(&opts)?)?;
            print_stdout(&format!("{}\n", json!({"manifest": manifest, "samples": count})))
        }
    }
}

fn configure_threads() -> mrsnet::Result<()> {
    let Ok(value) = std::env::var("MRSNET_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("MRSNET_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot configure thread pool: {e}")))
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", json!({"error": kind, "message": message}));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return fail("usage", first.trim_start_matches("error: "));
        }
    };
    let result = configure_threads()
        .map_err(anyhow::Error::from)
        .and_then(|_| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<Error>().map_or("internal", Error::kind);
            fail(kind, &format!("{e:#}"))
        }
    }
}
