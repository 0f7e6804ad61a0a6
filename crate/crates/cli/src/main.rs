use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use henon_ergodic::{run, CommandName, Overrides};

/// Run one Hénon-map experiment from a JSON config.
#[derive(Parser, Debug)]
#[command(name = "henon-ergodic", version)]
struct Args {
    #[arg(value_enum)]
    command: CommandName,
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core); never changes the outputs.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let start = Instant::now();
    let overrides = Overrides { seed: args.seed, threads: args.threads };
    match run(args.command, &args.config, &overrides, &args.out) {
        Ok(summary) => {
            for w in &summary.report.warnings {
                eprintln!("warning: {w}");
            }
            eprintln!(
                "{}: done in {:.2} s on {} threads, outputs in {}",
                args.command.as_str(),
                start.elapsed().as_secs_f64(),
                summary.threads,
                args.out.display()
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("henon-ergodic: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
