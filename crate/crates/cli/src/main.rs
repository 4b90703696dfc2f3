//! `ngl`: run nodal-geometry experiments from a JSON config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ngl_core::crofton::Kernel;
use ngl_core::experiment::{Command, CroftonOverride, ExperimentConfig, Runner};
use ngl_core::Error;

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    Spectrum,
    Nodal,
    Growth,
    Thm1,
    Localize,
    Tile,
    Rapid,
    Crofton,
    Harmonic,
    Carleman,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelArg {
    Disk,
    Circle,
}

#[derive(Debug, Parser)]
#[command(name = "ngl", version, about = "Nodal length and growth experiments on conformal tori")]
struct Args {
    command: Cmd,
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives bit-reproducible output.
    #[arg(long)]
    threads: Option<usize>,
    /// Crofton only: restrict to one estimator.
    #[arg(long, value_enum)]
    kernel: Option<KernelArg>,
    /// Crofton only: probe radius.
    #[arg(long)]
    r: Option<f64>,
    /// Crofton only: Monte Carlo samples.
    #[arg(long)]
    samples: Option<usize>,
}

fn run(args: Args) -> Result<(), (u8, Error)> {
    let load = |e: Error| (2, e);
    let text = std::fs::read_to_string(&args.config).map_err(|e| load(e.into()))?;
    let mut config: ExperimentConfig = ExperimentConfig::from_json(&text).map_err(load)?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| (2, Error::validation(format!("thread pool: {e}"))))?;
    }
    let out = args
        .out
        .or_else(|| config.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("ngl-out"));
    let fail = |e: Error| (if e.is_validation() { 2 } else { 3 }, e);
    let mut runner = Runner::new(config, &out).map_err(fail)?;
    runner.crofton = CroftonOverride {
        kernel: args.kernel.map(|k| match k {
            KernelArg::Disk => Kernel::Disk,
            KernelArg::Circle => Kernel::Circle,
        }),
        r: args.r,
        samples: args.samples,
    };
    let cmd = Command::parse(&format!("{:?}", args.command).to_lowercase()).map_err(fail)?;
    let records = runner.run(cmd).map_err(fail)?;
    if runner.from_cache {
        eprintln!("spectrum served from cache");
    }
    for r in &records {
        println!("{} {} -> {}", r.command, &r.config_hash[..12], out.join(r.artifacts.last().unwrap()).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, e)) => {
            eprintln!("error: {e}");
            ExitCode::from(code)
        }
    }
}
