mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use increc::data::{self, BlockSplit};
use increc::eval::{self, ProtocolObserver};
use increc::train::{EpochLog, TrainObserver};
use increc::{Error, ModelState};
use serde_json::json;

use config::{ConfigError, RunConfig};

const BLOCKS: &str = "blocks.bin";

#[derive(Parser)]
#[command(name = "increc", version, about = "Incremental training and evaluation of graph recommenders")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse, filter and split the interaction log into blocks.
    Prepare(Common),
    /// Run every configured method and seed over the prepared blocks.
    Run {
        #[command(flatten)]
        common: Common,
        /// Run a single seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
        /// Serial execution, for byte-identical reruns.
        #[arg(long)]
        deterministic: bool,
    },
    /// Test Recall@k of a saved checkpoint on the block it was trained for.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Print a checkpoint's manifest and tensor statistics.
    InspectCheckpoint {
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        Ok(cfg)
    }
}

/// Raised when a run finished but some methods did not.
#[derive(Debug)]
struct Incomplete {
    code: u8,
    failed: usize,
}

impl std::fmt::Display for Incomplete {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} method run(s) failed, see failures.json", self.failed)
    }
}

impl std::error::Error for Incomplete {}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(i) = cause.downcast_ref::<Incomplete>() {
            return i.code;
        }
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            if e.is_divergence() {
                return 3;
            }
            if e.is_data_error() {
                return 2;
            }
            return 1;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Prepare(c) => prepare(&c),
        Cmd::Run { common, seed, deterministic } => run(&common, seed, deterministic),
        Cmd::Eval { common, checkpoint } => evaluate(&common, &checkpoint),
        Cmd::InspectCheckpoint { checkpoint } => inspect(&checkpoint),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn refuse_existing(path: &Path, force: bool) -> anyhow::Result<()> {
    if path.exists() && !force {
        return Err(ConfigError(format!("{} exists; pass --force to overwrite", path.display())).into());
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

fn build_split(cfg: &RunConfig) -> increc::Result<BlockSplit> {
    let log = match (&cfg.data.synthetic, &cfg.data.path) {
        (Some(syn), _) => increc::synthetic::shaped_log(&syn.shaped(), syn.seed)?,
        (None, Some(path)) => data::parse_interactions(path, &cfg.data.parse_options())?,
        (None, None) => unreachable!("validated"),
    };
    let log = data::preprocess(&log, cfg.preprocess.dedup, cfg.preprocess.min_degree)?;
    data::temporal_split(log, cfg.split.base_frac, cfg.split.n_inc)
}

fn summary(split: &BlockSplit, cfg: &RunConfig) -> serde_json::Value {
    let log = split.log();
    json!({
        "n_users": log.n_users(),
        "n_items": log.n_items(),
        "n_records": log.len(),
        "density": log.density(),
        "block_sizes": split.block_sizes(),
        "config": cfg.effective(),
    })
}

fn prepare(c: &Common) -> anyhow::Result<()> {
    let cfg = c.load()?;
    let blocks = cfg.out.join(BLOCKS);
    refuse_existing(&blocks, c.force)?;
    let split = build_split(&cfg)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    data::write_manifest(&blocks, &split, cfg.effective())?;
    let s = summary(&split, &cfg);
    write_json(&cfg.out.join("summary.json"), &s)?;
    write_text(&cfg.out.join("config.toml"), &toml::to_string(&cfg)?)?;
    println!(
        "{} users, {} items, {} records, density {:.4}%, blocks {:?}",
        s["n_users"], s["n_items"], s["n_records"],
        split.log().density() * 100.0,
        split.block_sizes()
    );
    Ok(())
}

fn load_blocks(out: &Path) -> anyhow::Result<BlockSplit> {
    let path = out.join(BLOCKS);
    if !path.exists() {
        return Err(ConfigError(format!("{} not found; run `increc prepare` first", path.display())).into());
    }
    Ok(data::read_manifest(&path)?.1)
}

/// Streams epoch logs to JSONL and saves one checkpoint per trained model.
struct RunSink {
    logs: BufWriter<File>,
    ckpt_root: PathBuf,
    config: serde_json::Value,
    error: Option<anyhow::Error>,
}

impl RunSink {
    fn keep(&mut self, r: anyhow::Result<()>) {
        if let (Err(e), None) = (r, &self.error) {
            self.error = Some(e);
        }
    }
}

impl TrainObserver for RunSink {
    fn on_epoch(&mut self, log: &EpochLog) {
        let r = serde_json::to_writer(&mut self.logs, log)
            .map_err(anyhow::Error::from)
            .and_then(|_| self.logs.write_all(b"\n").map_err(Into::into));
        self.keep(r);
    }
}

impl ProtocolObserver<f32> for RunSink {
    fn on_model(&mut self, seed: u64, label: &str, block: usize, model: &ModelState<f32>) {
        let dir = self.ckpt_root.join(format!("seed{seed}")).join(label).join(format!("block{block}"));
        let r = model.save_checkpoint(&dir, seed, block, self.config.clone()).map_err(Into::into);
        self.keep(r);
    }
}

fn run(c: &Common, seed: Option<u64>, deterministic: bool) -> anyhow::Result<()> {
    let mut cfg = c.load()?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if deterministic {
        cfg.train.deterministic = true;
    }
    cfg.validate()?;
    let split = load_blocks(&cfg.out)?;
    let out = &cfg.out;
    let report_path = out.join("report.json");
    refuse_existing(&report_path, c.force)?;
    let ckpt_root = out.join("checkpoints");
    let logs_dir = out.join("logs");
    if c.force {
        for d in [&ckpt_root, &logs_dir] {
            if d.exists() {
                fs::remove_dir_all(d).with_context(|| format!("removing {}", d.display()))?;
            }
        }
    }
    fs::create_dir_all(&logs_dir)?;
    let effective = cfg.effective();
    write_text(&out.join("run_config.toml"), &toml::to_string(&cfg)?)?;
    let log_path = logs_dir.join("epochs.jsonl");
    let mut sink = RunSink {
        logs: BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?),
        ckpt_root,
        config: effective.clone(),
        error: None,
    };
    let plan = cfg.plan();
    let outcome = eval::run_protocol::<f32>(&split, &plan, &mut sink);
    sink.logs.flush()?;
    if let Some(e) = sink.error.take() {
        return Err(e.context("writing run artifacts"));
    }
    let mut report = match outcome {
        Ok(r) => r,
        Err(e) => {
            let failure = eval::Failure::new(cfg.seeds[0], "base", 0, &e);
            write_json(&out.join("failures.json"), &json!([failure]))?;
            return Err(e.into());
        }
    };
    report.config = effective.clone();
    write_text(&report_path, &report.to_json())?;
    write_text(&out.join("table.txt"), &report.to_table())?;
    write_json(&out.join("timings.json"), &json!({ "config": effective, "timings": report.timings_json() }))?;
    write_json(&out.join("failures.json"), &serde_json::to_value(&report.failures)?)?;
    print!("{}", report.to_table());
    if report.failures.is_empty() {
        return Ok(());
    }
    let code = if report.failures.iter().any(|f| f.kind == "divergence") {
        3
    } else if report.failures.iter().any(|f| f.kind == "data") {
        2
    } else {
        1
    };
    Err(Incomplete { code, failed: report.failures.len() }.into())
}

fn evaluate(c: &Common, checkpoint: &Path) -> anyhow::Result<()> {
    let cfg = c.load()?;
    let split = load_blocks(&cfg.out)?;
    let (manifest, model) = ModelState::<f32>::load_checkpoint(checkpoint)?;
    let recall = eval::block_test_recall(&split, &cfg.plan(), manifest.seed, manifest.block, &model)?;
    let out = json!({
        "checkpoint": checkpoint,
        "seed": manifest.seed,
        "block": manifest.block,
        "k": cfg.train.k,
        "recall": recall,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn inspect(checkpoint: &Path) -> anyhow::Result<()> {
    let (manifest, model) = ModelState::<f32>::load_checkpoint(checkpoint)?;
    if manifest.n_users != model.n_users() || manifest.n_items != model.n_items() {
        bail!("manifest sizes disagree with tensors");
    }
    println!("seed {}  block {}  dim {}  layers {}", manifest.seed, manifest.block, manifest.dim, manifest.layers);
    println!("users {}  items {}", manifest.n_users, manifest.n_items);
    for t in &manifest.tensors {
        let m = match t.name.as_str() {
            "e_user" => &model.e_user,
            "e_item" => &model.e_item,
            "w_user" => model.w_user.as_ref().expect("loaded"),
            "w_item" => model.w_item.as_ref().expect("loaded"),
            _ => continue,
        };
        let v = m.as_slice();
        let norm = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
        let max = v.iter().fold(0f32, |a, x| a.max(x.abs()));
        println!("{:<7} {:>7} x {:<4} frobenius {:.4}  max|x| {:.4}", t.name, t.rows, t.cols, norm, max);
    }
    if !manifest.config.is_null() {
        println!("{}", serde_json::to_string_pretty(&manifest.config)?);
    }
    Ok(())
}
