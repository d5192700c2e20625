use std::path::PathBuf;
use std::process::ExitCode;

use betacfg_cli::{run, CliError, Command, RunConfig, RunDir};
use clap::Parser;

#[derive(Debug, Parser)]
#[command(
    name = "betacfg",
    version,
    about = "Toy diffusion lab for β-scheduled classifier-free guidance"
)]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config. Defaults to `run`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = Some(o);
    }
    let root = cfg.out.clone().unwrap_or_else(|| PathBuf::from("run"));
    run(cli.command, &cfg, &RunDir::new(root))
}
