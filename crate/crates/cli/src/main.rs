use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use twoscale_cli::{run_command, CliError, Command, ExperimentConfig};

#[derive(Parser)]
#[command(name = "twoscale", version, about = "Two-scale homogenization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Corrector tables and the homogenized tensor.
    Cell(Common),
    /// Homogenized solution u0.
    Homogenize(Common),
    /// Fine-scale solution for one eps.
    Reference {
        #[command(flatten)]
        common: Common,
        /// Defaults to the smallest eps of the study.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Error study over the eps list.
    Study(Common),
    /// Oscillatory antiderivative check in 1-D.
    Lemma(Common),
    /// Translation invariance of the cell problems.
    Invariance(Common),
}

#[derive(Args)]
struct Common {
    /// JSON configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.directory`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dotted `key=value` override, repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads.
    #[arg(long, env = "TWOSCALE_THREADS")]
    threads: Option<usize>,
    /// Exit with status 4 when a checked property is violated.
    #[arg(long)]
    check: bool,
}

fn load(common: &Common) -> Result<ExperimentConfig, CliError> {
    let text = match &common.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Io {
            path: p.display().to_string(),
            source: e,
        })?,
        None => "{}".to_string(),
    };
    ExperimentConfig::from_str(&text, &common.overrides)
}

fn run(sub: Sub) -> Result<(), CliError> {
    let (cmd, common) = match sub {
        Sub::Cell(c) => (Command::Cell, c),
        Sub::Homogenize(c) => (Command::Homogenize, c),
        Sub::Reference { common, eps } => (Command::Reference { eps }, common),
        Sub::Study(c) => (Command::Study, c),
        Sub::Lemma(c) => (Command::Lemma, c),
        Sub::Invariance(c) => (Command::Invariance, c),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    let cfg = load(&common)?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output.directory.clone());
    let outcome = run_command(&cmd, &cfg, &out, common.check)?;
    for c in outcome.checks.iter().filter(|c| !c.passed) {
        log::warn!("property {} = {} violated", c.name, c.value);
    }
    println!("{} finished; results in {}", cmd.name(), out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
