mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rulex::Error;

use config::Config;

/// Formal-language rule extrapolation experiments.
///
/// Every subcommand reads the same flat configuration; `--config` loads a
/// `key = value` file and `--set key=value` overrides single keys.
#[derive(Parser)]
#[command(name = "rulex", version)]
struct Cli {
    /// Root directory for all outputs.
    #[arg(long, global = true, env = "RULEX_OUT", default_value = "runs")]
    out: PathBuf,

    #[arg(long, short, global = true)]
    config: Option<PathBuf>,

    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write training corpora and prompt sets for every seed.
    Generate,
    /// Write the ID/OOD prompt split.
    Prompts,
    /// Chance accuracies of a uniform random completer.
    Chance,
    /// Train one architecture on one language across seeds.
    Train,
    /// Evaluate a checkpoint on the prompt split.
    Eval,
    /// Category-mass traces and ordering statistics of a finished run.
    Dynamics,
    /// Fit the Bayesian mixture over the machine catalogue.
    Normative,
    /// Summarize every result under the output root.
    Report,
    /// Print the resolved configuration.
    Config,
}

/// Usage errors exit with 2 (clap's convention).
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Format { .. } | Error::Domain(_) | Error::Contract(_) | Error::Shape(_)) => 3,
        Some(Error::Resource(_)) => 4,
        Some(Error::Diverged { .. } | Error::DegeneratePosterior(_)) => 5,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = Config::default();
    if let Some(p) = &cli.config {
        cfg.load_file(p)?;
    }
    for s in &cli.set {
        cfg.assign(s)?;
    }
    let root = &cli.out;
    let dir = match cli.command {
        Command::Generate => commands::generate(root, &cfg)?,
        Command::Prompts => commands::prompts(root, &cfg)?,
        Command::Chance => commands::chance(root, &cfg)?,
        Command::Train => commands::train_cmd(root, &cfg)?,
        Command::Eval => commands::eval_cmd(root, &cfg)?,
        Command::Dynamics => commands::dynamics_cmd(root, &cfg)?,
        Command::Normative => commands::normative_cmd(root, &cfg)?,
        Command::Report => commands::report(root, &cfg)?,
        Command::Config => {
            let mut text: String = cfg.values().iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
            text.push_str(&format!("# hash {}\n", cfg.hash()));
            // A closed pipe (e.g. `| head`) is not an error.
            let _ = std::io::Write::write_all(&mut std::io::stdout(), text.as_bytes());
            return Ok(());
        }
    };
    eprintln!("wrote {}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
