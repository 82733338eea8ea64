use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fastslow::harness::{resolve_output_dir, run, selftest, ExperimentConfig, ExperimentKind};
use fastslow::Error;

#[derive(Parser)]
#[command(name = "fastslow", version, about = "Fast-slow averaging laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    run: RunFlags,
}

#[derive(Args)]
struct RunFlags {
    /// Output directory; defaults to $FASTSLOW_OUT, then the config, then ./fastslow-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Slow-motion ensembles and the averaged flow per ε.
    Simulate(Common),
    /// Green–Kubo diffusion matrix at configured points.
    Covariance(Common),
    /// Moment of sup|X^ε − X̄| against ε with a log-log fit.
    Rates(Common),
    /// Block quantile coupling diagnostics per ε.
    Couple(Common),
    /// Normalized deviations against the cluster set.
    Lil(Common),
    /// Run a built-in suite twice and compare artifacts byte for byte.
    Selftest(RunFlags),
}

fn execute(kind: ExperimentKind, common: Common) -> Result<(), Error> {
    let mut cfg = ExperimentConfig::from_file(&common.config)?;
    if cfg.kind != kind {
        return Err(Error::config("kind", format!("config declares `{}`, subcommand is `{}`", cfg.kind.name(), kind.name())));
    }
    if let Some(seed) = common.run.seed {
        cfg.seed = seed;
    }
    let out = resolve_output_dir(common.run.out.as_deref(), Some(&cfg));
    let outcome = run(&cfg, &out, common.run.threads)?;
    println!("config {}", outcome.digest);
    for f in outcome.files.iter().filter(|f| f.extension().is_some_and(|e| e == "json") || f.components().count() == 1) {
        println!("wrote {}", out.join(f).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(c) => execute(ExperimentKind::Simulate, c),
        Command::Covariance(c) => execute(ExperimentKind::Covariance, c),
        Command::Rates(c) => execute(ExperimentKind::Rates, c),
        Command::Couple(c) => execute(ExperimentKind::Couple, c),
        Command::Lil(c) => execute(ExperimentKind::Lil, c),
        Command::Selftest(flags) => {
            let out = resolve_output_dir(flags.out.as_deref(), None).join("selftest");
            selftest(&out, flags.seed.unwrap_or(0), flags.threads).and_then(|r| {
                println!("compared {} files with threads {:?}", r.files_compared, r.threads);
                if r.passed() {
                    println!("selftest PASS");
                    Ok(())
                } else {
                    Err(Error::Invariant(format!("selftest mismatches: {}", r.mismatches.join(", "))))
                }
            })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fastslow: {e}");
            if matches!(e, Error::Config { .. }) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
