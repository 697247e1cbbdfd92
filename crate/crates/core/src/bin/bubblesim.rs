use std::path::PathBuf;
use std::process::ExitCode;

use bubblesim::driver::{error_exit_code, run, Overrides};
use bubblesim::io::{parse_config, Scenario};
use bubblesim::Error;
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bubblesim", version, about = "Spherical bubbles in an incompressible fluid")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single-bubble Rayleigh-Plesset equation
    Rp(Args),
    /// Inviscid Lagrangian dynamics of N bubbles
    Inviscid(Args),
    /// Viscous prescribed-dynamics time-stepping scheme
    Viscous(Args),
    /// Harmonic basis, Gram matrix and reflection diagnostics
    Basis(Args),
    /// ALE flow and pushforward identity checks
    AleVerify(Args),
}

#[derive(clap::Args)]
struct Args {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Drop the convection term (viscous only)
    #[arg(long)]
    stokes_mode: bool,
    /// Continue past the separation horizon (viscous only)
    #[arg(long)]
    override_horizon: bool,
}

fn main() -> ExitCode {
    let (scenario, args) = match Cli::parse().command {
        Command::Rp(a) => (Scenario::Rp, a),
        Command::Inviscid(a) => (Scenario::Inviscid, a),
        Command::Viscous(a) => (Scenario::Viscous, a),
        Command::Basis(a) => (Scenario::Basis, a),
        Command::AleVerify(a) => (Scenario::AleVerify, a),
    };
    ExitCode::from(execute(scenario, &args) as u8)
}

fn execute(scenario: Scenario, args: &Args) -> i32 {
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(source) => return fail(&Error::Io { path: args.config.clone(), source }),
    };
    let config = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if config.scenario != scenario {
        return fail(&Error::InvalidConfig(format!(
            "configuration is for scenario {:?}, not {scenario:?}",
            config.scenario
        )));
    }
    let overrides = Overrides { stokes_mode: args.stokes_mode, override_horizon: args.override_horizon };
    match run(&config, &text, &args.out, overrides) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if let Some(e) = outcome.event {
                eprintln!("event {:?} at t = {}", e.tag, e.time);
            }
            for name in &outcome.failed_checks {
                eprintln!("check failed: {name}");
            }
            outcome.exit_code()
        }
        Err(e) => fail(&e),
    }
}

fn fail(e: &Error) -> i32 {
    eprintln!("error: {e}");
    error_exit_code(e)
}
