use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use stopvest::cli::{run, Mode, RunConfig};

/// Optimal investment with discretionary stopping: dual obstacle solve,
/// stopping boundary, primal policy and Monte Carlo check.
#[derive(Debug, Parser)]
#[command(name = "stopvest", version)]
struct Args {
    /// What to run.
    #[arg(value_enum)]
    mode: Mode,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `outputs` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo seed (overrides `mc.seed`).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut config = match RunConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        config.mc.seed = seed;
    }
    if let Some(out) = args.out {
        config.outputs = out;
    }
    config.mode = Some(args.mode);
    let out_dir = config.outputs.clone();

    match run(&config, args.mode, &out_dir) {
        Ok(outcome) => {
            for notice in &outcome.notices {
                println!("notice: {notice}");
            }
            for check in &outcome.checks {
                println!("{check}");
            }
            if let Some(mc) = &outcome.mc {
                println!(
                    "mc: mean {:.6} +- {:.6}, pde {:.6}, {}",
                    mc.mean,
                    mc.stderr,
                    mc.pde_value,
                    if mc.passed { "PASS" } else { "FAIL" }
                );
            }
            for file in &outcome.files {
                println!("wrote {}", file.display());
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
