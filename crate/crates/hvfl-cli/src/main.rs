use clap::{Parser, Subcommand};
use hvfl_cli::compare::run_comparison;
use hvfl_cli::config::{ComparisonSpec, ExperimentConfig};
use hvfl_cli::plot::emit_plot_data;
use hvfl_cli::runner::run_experiment;
use hvfl_cli::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

/// Deterministic hybrid horizontal-vertical federated learning simulator.
///
/// Log verbosity is controlled by the RUST_LOG environment variable.
#[derive(Parser)]
#[command(name = "hvfl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file (TOML, or a JSON echo).
    Run {
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (overrides the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the number of rounds.
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Run a paired-seed comparison across topology arms.
    Compare {
        spec: PathBuf,
        /// Output directory (overrides the spec's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit plot-ready .dat files from a finished run directory.
    Plot { dir: PathBuf },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run {
            config,
            seed,
            out,
            rounds,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(rounds) = rounds {
                cfg.train.rounds = rounds;
            }
            let out_dir = out
                .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
                .ok_or_else(|| {
                    CliError::Config(
                        "no output directory: set output_dir in the config or pass --out"
                            .to_string(),
                    )
                })?;
            log::info!("running {} -> {}", config.display(), out_dir.display());
            let summary = run_experiment(&cfg, &out_dir)?;
            println!(
                "run complete: {} rounds, final train loss {:.6e}, final test loss {:.6e}",
                summary.rounds, summary.final_train_loss, summary.final_test_loss
            );
            if let (Some(descent), Some(dominance)) =
                (summary.descent_violations, summary.dominance_violations)
            {
                println!(
                    "analysis: {descent} descent-audit violations, {dominance} bound-dominance violations"
                );
            }
            println!("outputs written to {}", out_dir.display());
            Ok(())
        }
        Command::Compare { spec, out } => {
            let comparison = ComparisonSpec::load(&spec)?;
            let out_dir = out
                .or_else(|| comparison.output_dir.as_ref().map(PathBuf::from))
                .ok_or_else(|| {
                    CliError::Config(
                        "no output directory: set output_dir in the spec or pass --out"
                            .to_string(),
                    )
                })?;
            log::info!("comparing {} arms", comparison.arms.len());
            let summary = run_comparison(&comparison, &out_dir)?;
            for arm in &summary.arms {
                let sd = arm
                    .sd_final_test_loss
                    .map(|s| format!("{s:.4e}"))
                    .unwrap_or_else(|| "n/a".to_string());
                println!(
                    "arm '{}': final test loss {:.6e} +/- {} over {} seeds",
                    arm.label,
                    arm.mean_final_test_loss,
                    sd,
                    summary.seeds.len()
                );
            }
            for line in summary.report_lines() {
                println!("{line}");
            }
            println!("outputs written to {}", out_dir.display());
            Ok(())
        }
        Command::Plot { dir } => {
            let summary = emit_plot_data(&dir)?;
            println!("wrote {} in {}", summary.files.join(", "), dir.display());
            Ok(())
        }
    }
}
