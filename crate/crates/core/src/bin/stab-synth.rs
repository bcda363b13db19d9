use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stab_synth::config::{Mode, RunConfig};
use stab_synth::run::{format_report, read_gain, run, verify, Overrides, RunError};

#[derive(Parser)]
#[command(name = "stab-synth", version, about = "Mean-square stabilizing feedback by discounted policy iteration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configuration and write schedule.csv and result.json.
    Run {
        config: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        alpha0: Option<f64>,
        #[arg(long, env = "STAB_SYNTH_SEED")]
        seed: Option<u64>,
        /// Keep every model-free batch under <output-dir>/batches.
        #[arg(long)]
        save_batches: bool,
        #[arg(long, env = "STAB_SYNTH_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
    },
    /// Check whether a gain stabilizes the configured system.
    Verify {
        config: PathBuf,
        /// JSON file holding a row list, or an object with a `gain` key.
        gain_file: PathBuf,
        /// Check the system shifted by this discount instead.
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
    },
}

fn fail(e: RunError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            mode,
            alpha0,
            seed,
            save_batches,
            output_dir,
        } => {
            let overrides = Overrides {
                mode,
                alpha0,
                seed,
                output_dir,
            };
            let cfg = RunConfig::load(&config).and_then(|mut c| overrides.apply(&mut c).map(|_| c));
            let cfg = match cfg {
                Ok(c) => c,
                Err(e) => return fail(e.into()),
            };
            match run(&cfg, save_batches) {
                Ok(out) => {
                    let k = out.gain.row_major();
                    println!(
                        "{} outer iterations from alpha0 = {}; K = {:?}",
                        out.result.schedule.len(),
                        out.alpha0,
                        k
                    );
                    print!("{}", format_report(&out.report));
                    println!("wrote {} and {}", out.schedule_path.display(), out.result_path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Verify {
            config,
            gain_file,
            alpha,
        } => {
            let report = RunConfig::load(&config)
                .map_err(RunError::from)
                .and_then(|cfg| {
                    let k = read_gain(&gain_file, cfg.system.m(), cfg.system.n())?;
                    verify(&cfg.system, &k, alpha)
                });
            match report {
                Ok(r) => {
                    print!("{}", format_report(&r));
                    if r.verdict {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(1)
                    }
                }
                Err(e) => fail(e),
            }
        }
    }
}
