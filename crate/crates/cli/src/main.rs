use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Deserialize;

use oneshot_core::pipeline::{
    run_ablation, run_pipeline, FeatureSource, Module, PipelineConfig, PipelineInputs,
};
use oneshot_core::segmenter::{BridgeBackend, OracleBackend, SegmenterBackend};
use oneshot_core::synth::{generate, SynthConfig};

#[derive(Debug, Parser)]
#[command(
    name = "oneshot-seg",
    version,
    about = "Training-free one-shot segmentation from a single labeled support image",
    args_conflicts_with_subcommands = true
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset (images, masks, features, oracle scenes).
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    num_queries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 8)]
    patch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Backend {
    Oracle,
    Bridge,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    support_image: Option<PathBuf>,
    #[arg(long)]
    support_mask: Option<PathBuf>,
    #[arg(long)]
    query_dir: Option<PathBuf>,
    #[arg(long)]
    gt_dir: Option<PathBuf>,
    /// Precomputed `<stem>.npy` features; without it features come from the bridge.
    #[arg(long)]
    features_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<Backend>,
    #[arg(long, value_name = "HOST:PORT")]
    bridge_addr: Option<String>,
    #[arg(long, value_name = "SECONDS", default_value_t = 60)]
    bridge_timeout: u64,
    /// Instance-map PNGs for the oracle backend, one per image stem.
    #[arg(long)]
    scene_dir: Option<PathBuf>,
    /// TOML file with algorithm settings and an optional [paths] table.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    emit_heatmaps: bool,
    /// Comma-separated modules to ablate: bg, rwpm, gas, pir.
    #[arg(long, value_name = "LIST", value_delimiter = ',')]
    ablation: Option<Vec<String>>,
}

/// Paths that may be given in the config file instead of on the command line.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PathsConfig {
    support_image: Option<PathBuf>,
    support_mask: Option<PathBuf>,
    query_dir: Option<PathBuf>,
    gt_dir: Option<PathBuf>,
    features_dir: Option<PathBuf>,
    scene_dir: Option<PathBuf>,
    out_dir: Option<PathBuf>,
    backend: Option<Backend>,
    bridge_addr: Option<String>,
}

enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

impl From<oneshot_core::Error> for Failure {
    fn from(e: oneshot_core::Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e.into())
        } else {
            Failure::Run(e.into())
        }
    }
}

fn config_err(e: anyhow::Error) -> Failure {
    Failure::Config(e)
}

fn load_config(path: Option<&Path>) -> anyhow::Result<(PipelineConfig, PathsConfig)> {
    let Some(path) = path else {
        return Ok(Default::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut table: toml::Table =
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let paths = match table.remove("paths") {
        Some(v) => v.try_into().context("invalid [paths] table")?,
        None => PathsConfig::default(),
    };
    let cfg = toml::Value::Table(table)
        .try_into()
        .with_context(|| format!("invalid settings in {}", path.display()))?;
    Ok((cfg, paths))
}

fn required(flag: &str, value: Option<PathBuf>) -> Result<PathBuf, Failure> {
    value.ok_or_else(|| Failure::Config(anyhow!("--{flag} is required (flag or [paths] entry)")))
}

fn run(args: RunArgs) -> Result<(), Failure> {
    let (mut cfg, paths) = load_config(args.config.as_deref()).map_err(config_err)?;
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.emit_heatmaps |= args.emit_heatmaps;
    let toggles = args
        .ablation
        .as_deref()
        .map(|list| list.iter().map(|s| Module::parse(s)).collect::<Result<Vec<_>, _>>())
        .transpose()?;

    let bridge_addr = args.bridge_addr.or(paths.bridge_addr);
    let timeout = Duration::from_secs(args.bridge_timeout);
    let features = match (args.features_dir.or(paths.features_dir), &bridge_addr) {
        (Some(dir), _) => FeatureSource::Dir(dir),
        (None, Some(addr)) => FeatureSource::Bridge(BridgeBackend::new(addr.clone(), timeout)),
        (None, None) => {
            return Err(Failure::Config(anyhow!("either --features-dir or --bridge-addr is required")))
        }
    };
    let inputs = PipelineInputs {
        support_image: required("support-image", args.support_image.or(paths.support_image))?,
        support_mask: required("support-mask", args.support_mask.or(paths.support_mask))?,
        query_dir: required("query-dir", args.query_dir.or(paths.query_dir))?,
        gt_dir: args.gt_dir.or(paths.gt_dir),
        features,
        out_dir: required("out-dir", args.out_dir.or(paths.out_dir))?,
    };

    let backend: Box<dyn SegmenterBackend> = match args.backend.or(paths.backend).unwrap_or(Backend::Oracle) {
        Backend::Oracle => {
            let dir = required("scene-dir", args.scene_dir.or(paths.scene_dir))?;
            Box::new(OracleBackend::from_dir(dir))
        }
        Backend::Bridge => {
            let addr = bridge_addr.ok_or_else(|| Failure::Config(anyhow!("--backend bridge needs --bridge-addr")))?;
            Box::new(BridgeBackend::new(addr, timeout))
        }
    };
    fs::create_dir_all(&inputs.out_dir)
        .with_context(|| format!("creating {}", inputs.out_dir.display()))
        .map_err(Failure::Run)?;

    match toggles {
        Some(toggles) => {
            let rows = run_ablation(&cfg, &inputs, backend.as_ref(), &toggles)?;
            println!("{:<10} {:>8} {:>8} {:>8} {:>7}", "config", "mIoU", "mDice", "AUC-PR", "failed");
            for r in rows {
                println!(
                    "{:<10} {:>8} {:>8} {:>8} {:>7}",
                    r.name,
                    fmt(r.m_iou),
                    fmt(r.m_dice),
                    fmt(r.m_auc),
                    r.num_failed
                );
            }
        }
        None => {
            let s = run_pipeline(&cfg, &inputs, backend.as_ref())?;
            println!(
                "queries {} failed {} mIoU {} mDice {} AUC-PR {}",
                s.num_queries,
                s.num_failed,
                fmt(s.m_iou),
                fmt(s.m_dice),
                fmt(s.m_auc)
            );
        }
    }
    Ok(())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.4}", x))
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let cfg = SynthConfig {
        seed: args.seed,
        num_queries: args.num_queries,
        size: args.size,
        patch: args.patch,
    };
    let layout = generate(&cfg)?.write(&args.out)?;
    info!("wrote synthetic dataset to {}", args.out.display());
    println!("support-image {}", layout.support_image.display());
    println!("support-mask {}", layout.support_mask.display());
    println!("query-dir {}", layout.query_dir.display());
    println!("gt-dir {}", layout.gt_dir.display());
    println!("features-dir {}", layout.features_dir.display());
    println!("scene-dir {}", layout.scene_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Some(Command::Synth(a)) => synth(a),
        None => run(cli.run),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("configuration error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
