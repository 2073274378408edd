//! Command-line front end: dataset and scene generation, training,
//! evaluation, reconstruction and overlays.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "endospec", version, about = "Spectral super-resolution and metric 3D reconstruction")]
struct Cli {
    /// JSON run configuration; relative paths inside it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset, or a two-frame scene bundle with --scene.
    Gen {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        scene: bool,
    },
    /// Train Model 1, or Model 2 from a trained Model 1.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        model: Option<u8>,
        #[arg(long)]
        init_model1: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score trained parameters, or run k-fold and transfer experiments.
    Eval {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        loocv: bool,
        #[arg(long)]
        transfer: bool,
        #[arg(long)]
        predictions_dir: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Structured-light triangulation fused with scaled two-view structure.
    Reconstruct {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        sl_only: bool,
    },
    /// Drape a narrow-band or oxygen-saturation map over a point cloud.
    Overlay {
        kind: OverlayKind,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OverlayKind {
    Nbi,
    Sao2,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::defaults(),
    };
    match cli.command {
        Command::Gen { out, seed, count, scene } => {
            let g = &mut cfg.gen;
            g.out_dir = out.or(g.out_dir.take());
            if let Some(s) = seed {
                g.seed = s;
                g.scene.seed = s;
            }
            if let Some(c) = count {
                g.count = c;
            }
            if scene {
                commands::gen::scene(g)
            } else {
                commands::gen::dataset(g)
            }
        }
        Command::Train { dataset, model, init_model1, out, seed } => {
            let t = &mut cfg.train;
            t.dataset_dir = dataset.or(t.dataset_dir.take());
            t.init_model1 = init_model1.or(t.init_model1.take());
            t.out_params = out.or(t.out_params.take());
            if let Some(m) = model {
                t.model = m;
            }
            if let Some(s) = seed {
                t.config.seed = s;
            }
            commands::train::run(t)
        }
        Command::Eval { dataset, params, loocv, transfer, predictions_dir, out } => {
            let e = &mut cfg.eval;
            e.dataset_dir = dataset.or(e.dataset_dir.take());
            e.params = params.or(e.params.take());
            e.predictions_dir = predictions_dir.or(e.predictions_dir.take());
            e.report_json = out.or(e.report_json.take());
            e.loocv |= loocv;
            e.transfer |= transfer;
            commands::eval::run(e)
        }
        Command::Reconstruct { out, metrics, sl_only } => {
            let r = &mut cfg.reconstruct;
            r.out_ply = out.or(r.out_ply.take());
            r.metrics_json = metrics.or(r.metrics_json.take());
            r.sl_only |= sl_only;
            commands::reconstruct::run(r)
        }
        Command::Overlay { kind, out } => {
            let o = &mut cfg.overlay;
            o.out_ply = out.or(o.out_ply.take());
            match kind {
                OverlayKind::Nbi => commands::overlay::nbi(o),
                OverlayKind::Sao2 => commands::overlay::sao2(o),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
