use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};
use kamspectra::perturb::Mode;
use kamspectra_cli::commands;
use kamspectra_cli::output::Writer;
use kamspectra_cli::RunConfig;

#[derive(Parser)]
#[command(
    name = "kamspectra",
    version,
    about = "Desk-scale spectral construction for (−Δ)^l + V"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true)]
    mode: Option<ModeArg>,
    #[arg(long, global = true)]
    levels: Option<u32>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Strict,
    Desk,
}

#[derive(Subcommand)]
enum Command {
    /// Isoenergetic curves and angle domains per level.
    Trace,
    /// Disk sets, zero counts and resonance arcs.
    Swisscheese,
    /// Invariant suite; nonzero exit on failure.
    Verify,
    /// Near-plane-wave eigenfunctions and convergence tables.
    Eigenfunction,
    /// Θ₁ measure and curve length over the k-grid.
    Sweep,
}

fn run(cli: Cli) -> Result<bool> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(m) = cli.mode {
        cfg.mode = match m {
            ModeArg::Strict => Mode::Strict,
            ModeArg::Desk => Mode::Desk,
        };
    }
    if let Some(n) = cli.levels {
        cfg.levels = n;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()?;
    }
    let out = &cli.out;
    let (ok, tel) = match cli.command {
        Command::Trace => (true, commands::cmd_trace(&cfg, out)?),
        Command::Swisscheese => {
            if cfg.levels < 2 {
                anyhow::bail!("levels: swisscheese needs at least 2");
            }
            (true, commands::cmd_swisscheese(&cfg, out)?)
        }
        Command::Verify => commands::cmd_verify(&cfg, out)?,
        Command::Eigenfunction => (true, commands::cmd_eigenfunction(&cfg, out)?),
        Command::Sweep => (true, commands::cmd_sweep(&cfg, out)?),
    };
    Writer::new(out)?.json("telemetry.json", &tel)?;
    Ok(ok)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
