use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use wavegauge::Exec;

mod commands;
mod config;
mod io;

use commands::{Context, Failure};
use config::ScenarioConfig;

#[derive(Parser)]
#[command(name = "wavegauge", version, about = "Adiabatic wave-operator gauge scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Scenario configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the command's primary tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Omit the timestamp so reports are byte-reproducible.
    #[arg(long, global = true)]
    no_timestamp: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Propagate, track the band and reconstruct ψ from the phase generators.
    Simulate,
    /// Check the algebraic identities on random samples.
    Verify,
    /// Lift a sampled pseudosurface.
    Holonomy,
    /// Refine the discrete Cartan residual and fit its order.
    Cartan,
}

fn load(cli: &Cli) -> Result<ScenarioConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| Failure::Config("--config is required".into()))?;
    let mut cfg = ScenarioConfig::load(path).map_err(Failure::Config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(tol) = cli.tol {
        let t = &mut cfg.tolerances;
        match cli.command {
            Command::Simulate => t.reconstruction = tol,
            Command::Verify => t.identity = tol,
            Command::Holonomy => t.boundary = tol,
            Command::Cartan => t.order_band = tol,
        }
    }
    cfg.validate().map_err(Failure::Config)?;
    Ok(cfg)
}

fn exec(cli: &Cli) -> Result<Exec, Failure> {
    match cli.threads {
        None => Ok(Exec::Parallel),
        Some(0) => Err(Failure::Config("--threads must be positive".into())),
        Some(1) => Ok(Exec::Sequential),
        #[cfg(feature = "parallel")]
        Some(t) => {
            rayon::ThreadPoolBuilder::new().num_threads(t).build_global().map_err(|e| Failure::Config(e.to_string()))?;
            Ok(Exec::Parallel)
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => Ok(Exec::Sequential),
    }
}

fn run(cli: &Cli) -> Result<bool, Failure> {
    let cfg = load(cli)?;
    let ctx = Context { out: cli.out.clone(), timestamp: !cli.no_timestamp, exec: exec(cli)? };
    match cli.command {
        Command::Simulate => commands::simulate(&cfg, &ctx),
        Command::Verify => commands::verify(&cfg, &ctx),
        Command::Holonomy => commands::holonomy(&cfg, &ctx),
        Command::Cartan => commands::cartan(&cfg, &ctx),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
