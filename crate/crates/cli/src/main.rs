use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dtc_cli::{load_config_with_overrides, CliError, Registry, RunContext, THREADS_VAR};

/// Driven disordered Heisenberg model on the square lattice: iPEPS and exact
/// small-lattice evolution.
#[derive(Parser, Debug)]
#[command(name = "simulate", version)]
struct Args {
    /// Run configuration (flat key = value file).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; takes precedence over the `output` key.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Extra `key=value` settings applied after the file.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn configure_threads() {
    // matrixmultiply reads its own variable on first use
    let threads = std::env::var(THREADS_VAR).ok().and_then(|v| v.trim().parse::<usize>().ok()).unwrap_or(1).max(1);
    std::env::set_var("MATMUL_NUM_THREADS", threads.to_string());
}

fn run(args: Args) -> Result<(), CliError> {
    let config = load_config_with_overrides(&args.config, &args.overrides)?;
    let out = args.out.unwrap_or_else(|| config.output.clone());
    log::info!("mode {} -> {}", config.mode, out.display());
    let ctx = RunContext { config, out, resume: args.resume };
    let outcome = Registry::standard().run(&ctx)?;
    for f in &outcome.files {
        log::info!("wrote {}", f.display());
    }
    print!("{}", outcome.summary);
    if !outcome.summary.ends_with('\n') {
        println!();
    }
    Ok(())
}

fn main() -> ExitCode {
    configure_threads();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
