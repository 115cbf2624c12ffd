use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fastab_core::config::ExperimentKind;
use fastab_core::runner::{self, Overrides};

#[derive(Parser)]
#[command(name = "fastab", version, about = "Filter stability laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List experiment kinds.
    List,
    /// Run an experiment, e.g. `fastab app2d --config app2d.json`.
    #[command(external_subcommand)]
    Run(Vec<String>),
}

#[derive(Parser)]
#[command(name = "fastab <experiment>", no_binary_name = true)]
struct RunArgs {
    experiment: String,
    /// JSON configuration; omitted means an empty document.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output root; files land in `<out>/<experiment>/`.
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "T")]
    t_end: Option<f64>,
    #[arg(long)]
    particles: Option<usize>,
}

fn run(args: Vec<String>) -> Result<i32, String> {
    let args = RunArgs::try_parse_from(args).map_err(|e| e.to_string())?;
    let kind = ExperimentKind::parse(&args.experiment).ok_or_else(|| {
        let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown experiment `{}`; expected one of {}", args.experiment, names.join(", "))
    })?;
    let text = match &args.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| format!("cli_io: {}: {e}", p.display()))?),
        None => None,
    };
    let overrides = Overrides {
        experiment: Some(kind),
        seed: args.seed,
        out: args.out,
        dt: args.dt,
        t_end: args.t_end,
        particles: args.particles,
    };
    let outcome = runner::run_with_overrides(text.as_deref(), &overrides).map_err(|e| e.to_string())?;
    println!("{}", outcome.directory.display());
    for (name, ok) in &outcome.checks {
        println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
    }
    Ok(outcome.exit_code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for k in ExperimentKind::ALL {
                println!("{:<13} {}", k.name(), k.describe());
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => match run(args) {
            Ok(code) => ExitCode::from(code as u8),
            Err(msg) => {
                eprintln!("{msg}");
                ExitCode::from(runner::EXIT_ERROR as u8)
            }
        },
    }
}
