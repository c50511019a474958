use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use memlstm::config::{validate_config, ExperimentConfig, PRESETS};
use memlstm::experiment::{export_maps, load_state, run_experiment, write_artifacts};

#[derive(Parser)]
#[command(
    name = "memlstm",
    version,
    about = "Memristor-crossbar LSTM experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write logs, maps and metrics.
    Run(RunArgs),
    /// Check a configuration file and list every violation.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write conductance and weight maps from a saved state.
    Export {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a preset configuration as TOML.
    Preset { name: String },
}

#[derive(Args)]
struct RunArgs {
    /// Built-in configuration: airline or gait-synthetic.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    preset: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Output directory; defaults to the config's, then `runs/<task>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn run(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = match (&args.preset, &args.config) {
        (Some(p), None) => ExperimentConfig::preset(p)?,
        (None, Some(path)) => {
            ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?
        }
        _ => bail!(
            "give exactly one of --preset ({}) or --config",
            PRESETS.join(", ")
        ),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
        if let Some(g) = cfg.gait.as_mut() {
            g.seed = seed;
        }
    }
    if let Some(epochs) = args.epochs {
        cfg.epochs = epochs;
    }
    let violations = cfg.violations();
    if !violations.is_empty() {
        for v in &violations {
            eprintln!("{v}");
        }
        bail!("invalid configuration ({} violations)", violations.len());
    }
    let out = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(cfg.task.name()));

    let result = run_experiment(&cfg)?;
    let files = write_artifacts(&result, &out)
        .with_context(|| format!("writing artifacts to {}", out.display()))?;
    for (k, v) in &result.metrics {
        println!("{k}: {v:.6}");
    }
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args),
        Command::Validate { config } => validate_config(&config)
            .with_context(|| format!("reading {}", config.display()))
            .and_then(|violations| {
                if violations.is_empty() {
                    println!("{}: ok", config.display());
                    return Ok(());
                }
                for v in &violations {
                    println!("{v}");
                }
                bail!("{} violations", violations.len())
            }),
        Command::Export { state, out } => load_state(&state)
            .with_context(|| format!("loading {}", state.display()))
            .and_then(|(cfg, net)| {
                let files = export_maps(&net, cfg.seed, &out)?;
                for f in files {
                    println!("{}", f.display());
                }
                Ok(())
            }),
        Command::Preset { name } => ExperimentConfig::preset(&name)
            .and_then(|c| c.to_toml())
            .map(|t| print!("{t}"))
            .map_err(Into::into),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
