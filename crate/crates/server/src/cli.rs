//! The `dietwise` command line: the server plus offline dataset, preprocessing,
//! evaluation and analytics tools. Tool output is JSON on stdout.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dietwise_core::analytics::{self, ConfusionCounts, SampleSizeSpec};
use dietwise_core::catalog::parse_catalog;
use dietwise_core::coco::{self, SplitSpec};
use dietwise_core::detection::{evaluate_reference, DEFAULT_THRESHOLD};
use dietwise_core::preprocess::{self, PreprocessConfig};
use serde::Serialize;
use serde_json::json;

use crate::config::Config;
use crate::startup::{self, ServeFlags};

#[derive(Debug, Parser)]
#[command(name = "dietwise", version, about = "Food recognition and dietary guidance service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the HTTP API.
    Serve(ServeArgs),
    /// Inspect, clean and split COCO annotation files.
    #[command(subcommand)]
    Ingest(IngestCommand),
    /// Channel statistics and augmentation previews.
    #[command(subcommand)]
    Preprocess(PreprocessCommand),
    /// Image-level evaluation of the reference detector on a split.
    Eval(EvalArgs),
    /// Metrics, NPS, Likert summaries and sample sizes.
    #[command(subcommand)]
    Analytics(AnalyticsCommand),
    /// Catalog file checks.
    #[command(subcommand)]
    Catalog(CatalogCommand),
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Hex master key file; overrides the environment and the config.
    #[arg(long)]
    pub key_file: Option<PathBuf>,
    /// Allow plain HTTP and a throwaway master key.
    #[arg(long)]
    pub insecure_dev: bool,
}

#[derive(Debug, Subcommand)]
pub enum IngestCommand {
    /// Parse and print counts.
    Parse { annotations: PathBuf },
    /// Print data-quality findings; exits nonzero when any exist.
    Validate { annotations: PathBuf },
    /// Write the food-only subset.
    Filter {
        annotations: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-category annotation and image counts.
    Stats { annotations: PathBuf },
    /// Write train.txt, val.txt and test.txt.
    Split {
        annotations: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Comma-separated train,val,test.
        #[arg(long, default_value = "0.70,0.15,0.15")]
        fractions: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum PreprocessCommand {
    /// Per-channel mean and population std over every image in a directory.
    Stats { dir: PathBuf },
    /// Augment one image and write a PNG.
    Apply {
        image: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    /// Id-list file, one image id per line.
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Subcommand)]
pub enum AnalyticsCommand {
    /// Precision, accuracy, recall and F1 from confusion counts.
    Metrics {
        #[arg(long)]
        tp: u64,
        #[arg(long)]
        tn: u64,
        #[arg(long)]
        fp: u64,
        #[arg(long = "fn")]
        fn_: u64,
    },
    /// NPS over the `nps` item of a response file.
    Nps { responses: PathBuf },
    /// Per-item summaries of a response file.
    Likert { responses: PathBuf },
    /// Respondents needed for a proportion at confidence `z` and margin `e`.
    SampleSize {
        #[arg(long, default_value_t = 1.96)]
        z: f64,
        #[arg(long, default_value_t = 0.5)]
        p: f64,
        #[arg(long, default_value_t = 0.05)]
        e: f64,
    },
}

#[derive(Debug, Subcommand)]
pub enum CatalogCommand {
    /// Parse and validate a JSONL catalog.
    Check { file: PathBuf },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_coco(path: &Path) -> Result<coco::CocoDataset> {
    coco::parse_coco(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn parse_fractions(text: &str, seed: u64) -> Result<SplitSpec> {
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>().with_context(|| format!("fraction {p:?}")))
        .collect::<Result<_>>()?;
    let [train, val, test] = parts[..] else {
        bail!("expected three fractions, got {}", parts.len());
    };
    Ok(SplitSpec::new(train, val, test, seed)?)
}

/// Runs a parsed command; the returned code becomes the process exit status.
pub async fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Serve(args) => serve(args).await,
        Command::Ingest(cmd) => ingest(cmd),
        Command::Preprocess(cmd) => preprocess_cmd(cmd),
        Command::Eval(args) => {
            let dataset = load_coco(&args.annotations)?;
            let ids = coco::parse_id_list(&read(&args.split)?)?;
            let counts = evaluate_reference(&dataset, &ids, args.threshold)?;
            let metrics = analytics::compute_metrics(counts);
            print(&json!({
                "images": ids.len(),
                "counts": counts,
                "metrics": metrics.as_ref().ok(),
                "rendered": metrics.as_ref().ok().map(|m| m.rendered().into_iter().collect::<std::collections::BTreeMap<_, _>>()),
                "undefined": metrics.err().map(|e| e.to_string()),
            }))?;
            Ok(0)
        }
        Command::Analytics(cmd) => analytics_cmd(cmd),
        Command::Catalog(CatalogCommand::Check { file }) => {
            let items = parse_catalog(&read(&file)?).with_context(|| format!("checking {}", file.display()))?;
            print(&json!({ "items": items.len() }))?;
            Ok(0)
        }
    }
}

async fn serve(args: ServeArgs) -> Result<i32> {
    let config = Config::load(&args.config)?;
    let flags = ServeFlags { key_file: args.key_file, insecure_dev: args.insecure_dev };
    let prepared = startup::prepare(config, &flags)?;
    if prepared.tls.is_none() {
        tracing::warn!("serving plain HTTP (--insecure-dev)");
    }
    if prepared.key_source == startup::KeySource::Ephemeral {
        tracing::warn!("using a throwaway master key; stored health fields will be unreadable after restart");
    }
    let running = startup::start(prepared).await?;
    tracing::info!(addr = %running.addr, tls = running.tls, metrics = ?running.metrics_addr, "listening");
    tokio::signal::ctrl_c().await?;
    tracing::info!("shutting down");
    running.shutdown().await?;
    Ok(0)
}

fn ingest(cmd: IngestCommand) -> Result<i32> {
    match cmd {
        IngestCommand::Parse { annotations } => {
            let d = load_coco(&annotations)?;
            print(&json!({
                "images": d.images().len(),
                "annotations": d.annotations().len(),
                "categories": d.categories().len(),
            }))?;
            Ok(0)
        }
        IngestCommand::Validate { annotations } => {
            let findings = coco::validate(&load_coco(&annotations)?);
            print(&findings)?;
            Ok(if findings.is_empty() { 0 } else { 1 })
        }
        IngestCommand::Filter { annotations, out } => {
            let food = coco::filter_food(&load_coco(&annotations)?);
            fs::write(&out, food.to_json()).with_context(|| format!("writing {}", out.display()))?;
            print(&json!({ "images": food.images().len(), "annotations": food.annotations().len() }))?;
            Ok(0)
        }
        IngestCommand::Stats { annotations } => {
            print(&coco::dataset_stats(&load_coco(&annotations)?))?;
            Ok(0)
        }
        IngestCommand::Split { annotations, seed, fractions, out } => {
            let spec = parse_fractions(&fractions, seed)?;
            let result = coco::split(&load_coco(&annotations)?.image_ids(), &spec)?;
            fs::create_dir_all(&out)?;
            for (name, ids) in [("train", &result.train), ("val", &result.val), ("test", &result.test)] {
                let path = out.join(format!("{name}.txt"));
                fs::write(&path, coco::format_id_list(ids)).with_context(|| format!("writing {}", path.display()))?;
            }
            print(&json!({ "train": result.train.len(), "val": result.val.len(), "test": result.test.len() }))?;
            Ok(0)
        }
    }
}

fn preprocess_cmd(cmd: PreprocessCommand) -> Result<i32> {
    match cmd {
        PreprocessCommand::Stats { dir } => {
            let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
                .with_context(|| format!("listing {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            paths.sort();
            let images = paths
                .iter()
                .map(|p| {
                    let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                    preprocess::decode_image(&bytes).with_context(|| format!("decoding {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let (mean, std) = preprocess::compute_dataset_stats(&images)?;
            print(&json!({ "images": images.len(), "channel_mean": mean, "channel_std": std }))?;
            Ok(0)
        }
        PreprocessCommand::Apply { image, config, index, out } => {
            let config = match config {
                Some(path) => PreprocessConfig::from_toml(&read(&path)?)?,
                None => PreprocessConfig::default(),
            };
            let bytes = fs::read(&image).with_context(|| format!("reading {}", image.display()))?;
            let img = preprocess::decode_image(&bytes)?;
            let draw = preprocess::draw_augment(img.height(), img.width(), &config, index);
            let augmented = preprocess::augment(&img, &config, index)?;
            fs::write(&out, preprocess::encode_png(&augmented)?).with_context(|| format!("writing {}", out.display()))?;
            print(&json!({
                "crop": [draw.crop_top, draw.crop_left, draw.crop_height, draw.crop_width],
                "flip": draw.flip,
                "brightness": draw.brightness,
                "hue": draw.hue,
            }))?;
            Ok(0)
        }
    }
}

fn analytics_cmd(cmd: AnalyticsCommand) -> Result<i32> {
    match cmd {
        AnalyticsCommand::Metrics { tp, tn, fp, fn_ } => {
            let report = analytics::compute_metrics(ConfusionCounts::new(tp, tn, fp, fn_))?;
            for (name, value) in report.rendered() {
                println!("{name}: {value}");
            }
            Ok(0)
        }
        AnalyticsCommand::Nps { responses } => {
            let parsed = analytics::parse_responses(&read(&responses)?)?;
            let ratings: Vec<u8> =
                parsed.iter().filter(|r| r.item_id == analytics::NPS_ITEM).map(|r| r.rating).collect();
            print(&analytics::nps(&ratings)?)?;
            Ok(0)
        }
        AnalyticsCommand::Likert { responses } => {
            print(&analytics::survey_summary(&analytics::parse_responses(&read(&responses)?)?)?)?;
            Ok(0)
        }
        AnalyticsCommand::SampleSize { z, p, e } => {
            println!("{}", analytics::sample_size(SampleSizeSpec { z, p, e })?);
            Ok(0)
        }
    }
}
