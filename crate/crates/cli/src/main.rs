mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use canonica_core::Vec3;

use crate::commands::{CanonicalArgs, MeshArgs};
use crate::config::Config;

#[derive(Parser, Debug)]
#[command(name = "canonica", version, about = "Motion-compensated splat reconstruction and capture simulation")]
struct Cli {
    /// Worker thread cap; 0 uses every core.
    #[arg(long, global = true, env = "CANONICA_THREADS")]
    threads: Option<usize>,

    /// Log more (-v debug, -vv trace). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    /// Log warnings and errors only.
    #[arg(short, long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BackendKind {
    Gsplat,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset with its ground-truth scene.
    GenScene {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Replace an existing output directory.
        #[arg(long)]
        force: bool,
    },
    /// Fly the capture plan in simulation and export the capture poses.
    SimulateCapture {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Overrides `flight.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Also render the scene from each captured pose, producing a dataset.
        #[arg(long)]
        render: bool,
        #[arg(long)]
        force: bool,
    },
    /// Fit the dataset once, without motion compensation.
    Reconstruct {
        dataset: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Initial scene; defaults to init.gsplat in the dataset.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Iterate fit, render, flow and deform toward a canonical scene.
    Canonical {
        dataset: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
        /// Flow/deform rounds; overrides `canonical.iterations`.
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, value_enum, default_value = "gsplat")]
        backend: BackendKind,
        #[arg(long)]
        init: Option<PathBuf>,
        /// Continue after the last iteration recorded in the output directory.
        #[arg(long, conflicts_with = "force")]
        resume: bool,
        #[arg(long)]
        force: bool,
    },
    /// PSNR and SSIM between same-named images of two directories.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Warp each prediction onto its reference by optical flow first.
        #[arg(long)]
        aligned: bool,
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// CSV destination; stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Extract an OBJ surface from a scene checkpoint.
    Mesh {
        checkpoint: PathBuf,
        /// Crop radius around the center, meters.
        #[arg(long)]
        radius: f64,
        #[arg(long, value_parser = parse_vec3, default_value = "0,0,0", allow_hyphen_values = true)]
        center: Vec3,
        /// Samples per grid axis.
        #[arg(long, default_value_t = 128)]
        resolution: usize,
        #[arg(long, default_value_t = 0.5)]
        iso: f64,
        /// Also dump the opacity grid.
        #[arg(long)]
        vox: Option<PathBuf>,
        #[arg(long)]
        no_colors: bool,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Dense flow from one image to another, written as FLO1.
    Flow {
        src: PathBuf,
        dst: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn parse_vec3(s: &str) -> Result<Vec3, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("`{p}` is not a number")))
        .collect::<Result<_, _>>()?;
    match v.as_slice() {
        [x, y, z] => Ok(Vec3::new(*x, *y, *z)),
        _ => Err(format!("expected x,y,z, got {} values", v.len())),
    }
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => "warn",
        (false, 0) => "info",
        (false, 1) => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp_millis()
        .init();
}

fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::GenScene { config, out, force } => {
            commands::gen_scene(&Config::load(config.as_deref())?, &out, force)
        }
        Command::SimulateCapture {
            config,
            out,
            seed,
            render,
            force,
        } => commands::simulate_capture(&Config::load(config.as_deref())?, &out, seed, render, force).map(|_| ()),
        Command::Reconstruct {
            dataset,
            config,
            out,
            init,
            force,
        } => commands::reconstruct(&Config::load(config.as_deref())?, &dataset, &out, init.as_deref(), force),
        Command::Canonical {
            dataset,
            config,
            out,
            iters,
            backend: BackendKind::Gsplat,
            init,
            resume,
            force,
        } => commands::canonical(
            &Config::load(config.as_deref())?,
            &CanonicalArgs {
                dataset: &dataset,
                out: &out,
                iterations: iters,
                init: init.as_deref(),
                resume,
                force,
            },
        ),
        Command::Metrics {
            pred,
            gt,
            aligned,
            config,
            out,
        } => commands::metrics(&Config::load(config.as_deref())?, &pred, &gt, aligned, out.as_deref()).map(|_| ()),
        Command::Mesh {
            checkpoint,
            radius,
            center,
            resolution,
            iso,
            vox,
            no_colors,
            out,
        } => commands::mesh(&MeshArgs {
            checkpoint: &checkpoint,
            out: &out,
            radius,
            center,
            resolution,
            iso,
            vox: vox.as_deref(),
            colors: !no_colors,
        })
        .map(|_| ()),
        Command::Flow { src, dst, config, out } => commands::flow(&Config::load(config.as_deref())?, &src, &dst, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose, cli.quiet);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
