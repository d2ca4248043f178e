//! `ctxkernel` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ctxkernel::context::Variant;
use ctxkernel::metrics::Protocol;

use commands::Failure;
use config::{InitMapTag, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "ctxkernel", version, about = "Deep context-aware kernel networks on image cell grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = parse_variant)]
    variant: Option<Variant>,
    #[arg(long, global = true)]
    depth: Option<usize>,
    #[arg(long, global = true)]
    radius: Option<usize>,
    #[arg(long = "init-map", global = true, value_parser = parse_init_map)]
    init_map: Option<InitMapTag>,
    #[arg(long = "gamma-factor", global = true)]
    gamma_factor: Option<f64>,
    #[arg(long, global = true, value_parser = parse_protocol)]
    protocol: Option<Protocol>,
    /// Train or score with SVM ensembles.
    #[arg(long, global = true)]
    ensemble: bool,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output (and default checkpoint) directory.
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Check a dataset and forecast map dimensions.
    Validate,
    /// Train context and SVMs, writing a checkpoint.
    Train,
    /// Score a split with a checkpoint and report metrics.
    Eval,
    /// Write the checkpoint's context as a weighted edge list.
    ExportContext,
    /// Compare analytic and finite-difference context gradients.
    Gradcheck,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: ctxkernel::Error| e.to_string())
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse().map_err(|e: ctxkernel::Error| e.to_string())
}

fn parse_init_map(s: &str) -> Result<InitMapTag, String> {
    s.parse()
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = cli.threads {
        config.threads = Some(v);
    }
    if let Some(v) = cli.seed {
        config.seed = v;
    }
    if let Some(v) = cli.variant {
        config.variant = v;
    }
    if let Some(v) = cli.depth {
        config.depth = v;
    }
    if let Some(v) = cli.radius {
        config.radius = v;
    }
    if let Some(v) = cli.init_map {
        config.init_map = v;
    }
    if let Some(v) = cli.gamma_factor {
        config.gamma_factor = v;
    }
    if let Some(v) = cli.protocol {
        config.protocol = v;
    }
    if cli.ensemble {
        config.ensemble = true;
    }
    if let Some(v) = &cli.manifest {
        config.manifest = Some(v.clone());
    }
    if let Some(v) = &cli.output {
        config.output_dir = v.clone();
    }
    if let Some(v) = &cli.checkpoint {
        config.checkpoint = Some(v.clone());
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let config = resolve(cli)?;
    if let Some(threads) = config.threads {
        if threads == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Failure::Usage(format!("cannot size the worker pool: {e}")))?;
    }
    match cli.command {
        Command::Validate => commands::validate(&config),
        Command::Train => commands::train(&config),
        Command::Eval => commands::eval(&config),
        Command::ExportContext => commands::export_context(&config),
        Command::Gradcheck => commands::gradcheck_cmd(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CTXKERNEL_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
