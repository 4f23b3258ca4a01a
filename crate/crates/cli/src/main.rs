//! `suad`: command-line driver for the anomaly-detection pipeline.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use suad_core::io::checkpoint;
use suad_core::stages;
use suad_core::{Error, ModelKind, Result, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "suad",
    version,
    about = "Unsupervised anomaly detection in 3D sinus volumes"
)]
struct Cli {
    /// Run configuration (flat `key = value` file). Built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `paths.work_dir`.
    #[arg(long, global = true)]
    work_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the phantom dataset into `<work>/raw`.
    GenData,
    /// Preprocess `<work>/raw` into `<work>/pre`.
    Preprocess,
    /// Fit a model to the healthy training split.
    Train {
        #[arg(long)]
        model: Option<String>,
    },
    /// Pick thresholds on the validation split.
    Calibrate {
        #[arg(long)]
        model: Option<String>,
    },
    /// Score the test split and write the metrics report.
    Evaluate {
        #[arg(long)]
        model: Option<String>,
    },
    /// Render residual heat maps for flagged test volumes.
    Heatmap {
        #[arg(long)]
        model: Option<String>,
        /// Render every test volume, flagged or not.
        #[arg(long)]
        all: bool,
    },
    /// Every stage in order.
    Run {
        #[arg(long)]
        model: Option<String>,
    },
    /// Describe a checkpoint and verify its checksum.
    Info { checkpoint: PathBuf },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(dir) = &cli.work_dir {
        cfg.work_dir = dir.clone();
    }
    Ok(cfg)
}

fn kind(cfg: &RunConfig, flag: &Option<String>) -> Result<ModelKind> {
    flag.as_deref().map_or(Ok(cfg.model), |s| {
        ModelKind::parse(s).map_err(|e| Error::Config(e.to_string()))
    })
}

fn info(path: &PathBuf) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let info = checkpoint::inspect(&bytes)?;
    let a = &info.arch;
    let dims = a.input_dims.map(|d| d.to_string()).join("x");
    let channels = a
        .channels
        .iter()
        .map(|c| c.to_string())
        .collect::<Vec<_>>()
        .join(",");
    println!("format version: {}", info.version);
    println!("model: {}", info.kind.as_str());
    println!("input: {dims}");
    println!("latent: {}", a.latent_dim);
    println!("channels: {channels}");
    println!("parameters: {}", info.parameter_count);
    for (k, v) in &info.meta {
        println!("meta.{k}: {v}");
    }
    if info.checksum_ok() {
        println!("checksum: ok ({:#018x})", info.stored_checksum);
        Ok(())
    } else {
        println!(
            "checksum: MISMATCH (stored {:#018x}, computed {:#018x})",
            info.stored_checksum, info.computed_checksum
        );
        Err(Error::Checksum {
            stored: info.stored_checksum,
            computed: info.computed_checksum,
        })
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Info { checkpoint } = &cli.command {
        return info(checkpoint);
    }
    let mut cfg = load_config(&cli)?;
    match &cli.command {
        Command::GenData => {
            let rows = stages::gen_data(&cfg)?;
            println!(
                "wrote {} volumes to {}",
                rows.len(),
                cfg.work_dir.join("raw").display()
            );
        }
        Command::Preprocess => {
            let rows = stages::preprocess(&cfg)?;
            println!(
                "preprocessed {} volumes into {}",
                rows.len(),
                cfg.work_dir.join("pre").display()
            );
        }
        Command::Train { model } => {
            let k = kind(&cfg, model)?;
            let history = stages::train(&cfg, k)?;
            if let Some(last) = history.last() {
                println!(
                    "epoch {}: recon {:.6}, kl {:.6}, total {:.6}",
                    last.epoch, last.recon, last.kl, last.total
                );
            }
        }
        Command::Calibrate { model } => {
            let t = stages::calibrate(&cfg, kind(&cfg, model)?)?;
            println!("t_l1 = {}\nt_l2 = {}\nmode = {}", t.t_l1, t.t_l2, t.mode);
        }
        Command::Evaluate { model } => {
            let k = kind(&cfg, model)?;
            stages::evaluate(&cfg, k)?;
            let ws = stages::Workspace::new(&cfg.work_dir);
            let text =
                std::fs::read_to_string(ws.report(k)).map_err(|e| Error::io(ws.report(k), e))?;
            print!("{text}");
        }
        Command::Heatmap { model, all } => {
            cfg.heatmap_all |= all;
            let files = stages::heatmaps(&cfg, kind(&cfg, model)?)?;
            println!("wrote {} heat-map images", files.len());
        }
        Command::Run { model } => {
            let k = kind(&cfg, model)?;
            stages::run_all(&cfg, k)?;
            let ws = stages::Workspace::new(&cfg.work_dir);
            let text =
                std::fs::read_to_string(ws.report(k)).map_err(|e| Error::io(ws.report(k), e))?;
            print!("{text}");
        }
        Command::Info { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("suad: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
