use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use spatter::commands::{run, Command, Context, Overrides};
use spatter::config::{RunConfig, SegmenterKind};
use spatter::error::CliError;

/// Spatter registration, fringe-projection roughness and regression tooling.
#[derive(Parser)]
#[command(name = "spatter", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory (default: `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Label source for `register`.
    #[arg(long, global = true, value_enum)]
    segmenter: Option<SegmenterKind>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPATTER_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = (|| {
        let cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let ctx = Context::new(
            cfg,
            Overrides {
                seed: cli.seed,
                jobs: cli.jobs,
                out: cli.out.clone(),
                segmenter: cli.segmenter,
            },
        )?;
        run(cli.command, &ctx)
    })();
    match result {
        Ok(o) => {
            if o.skipped > 0 {
                eprintln!("spatter {}: {} item(s) skipped", cli.command.name(), o.skipped);
            }
            ExitCode::from(o.exit_code() as u8)
        }
        Err(e) => {
            let e: CliError = e;
            eprintln!("spatter {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
