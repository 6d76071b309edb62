use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cifm::oracle::{make_synthetic_corpus, SyntheticKind};
use cifm::workbench::config::{parse_overrides, resolve, schema};
use cifm::workbench::ingest::{export, load_manifest, Format};
use cifm::workbench::presets;
use cifm::workbench::report::config_hash;
use cifm::workbench::{run, Command, RunOptions};
use cifm::CifmError;

#[derive(Parser)]
#[command(name = "cifm", version, about = "Conditional information flow maximization workbench")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Presets applied beneath the config, `+`-joined or repeated.
    #[arg(short, long)]
    preset: Vec<String>,
    /// Evaluate these checkpoints instead of training.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Print the resolved config and its hash, then stop.
    #[arg(long)]
    dry_run: bool,
    /// Config overrides such as `--train.lr=1e-3` or `--cim.epsilon 0.05`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every seed, save checkpoints, report test metrics and representation quality.
    Train(RunArgs),
    /// Re-evaluate checkpoints on the test split.
    Evaluate(RunArgs),
    /// Robust scores under random or adversarial embedding noise.
    Sweep(RunArgs),
    /// Frozen-extractor probes on target datasets.
    Transfer(RunArgs),
    /// Evaluate on a target taxonomy mapped into the source labels.
    Ood(RunArgs),
    /// Write a generated corpus as dataset files plus a manifest.
    Synth {
        kind: SyntheticKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "tsv")]
        format: Format,
    },
    /// Parse a dataset manifest and report split sizes and labels.
    Ingest { manifest: PathBuf },
    /// Print the JSON schema of the experiment config.
    Schema,
    /// List preset names.
    Presets,
}

fn execute(cli: Cli) -> cifm::Result<()> {
    let (command, args) = match cli.command {
        Cmd::Train(a) => (Command::Train, a),
        Cmd::Evaluate(a) => (Command::Evaluate, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Transfer(a) => (Command::Transfer, a),
        Cmd::Ood(a) => (Command::Ood, a),
        Cmd::Synth { kind, out, seed, format } => {
            for d in make_synthetic_corpus(kind, seed).datasets {
                let dir = out.join(&d.name);
                let m = export(&d, &dir, format)?;
                println!("{}", m.display());
            }
            return Ok(());
        }
        Cmd::Ingest { manifest } => {
            let (_, report) = load_manifest(&manifest)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            return Ok(());
        }
        Cmd::Schema => {
            println!("{}", serde_json::to_string_pretty(&schema())?);
            return Ok(());
        }
        Cmd::Presets => {
            for n in presets::names() {
                println!("{n}");
            }
            return Ok(());
        }
    };
    let overrides = parse_overrides(&args.overrides)?;
    let cfg = resolve(args.config.as_deref(), &args.preset, &overrides)?;
    if args.dry_run {
        println!("# config hash {}\n{}", config_hash(&cfg), cfg.to_toml());
        return Ok(());
    }
    let outcome = run(command, &cfg, &RunOptions { checkpoints: args.checkpoint })?;
    print!("{}", outcome.text);
    println!("artifacts: {}", outcome.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                CifmError::Usage(_) | CifmError::Config(_) | CifmError::Parse { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
