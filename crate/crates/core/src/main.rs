use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use fedlqr::harness::runner::{resolve_output_dir, run_experiment};
use fedlqr::harness::summary::emit_plot_data;
use fedlqr::harness::verify::verify;
use fedlqr::harness::ExperimentConfig;
use fedlqr::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_PRECONDITION: u8 = 3;
const EXIT_ORACLE: u8 = 4;
const EXIT_RUNTIME: u8 = 1;

#[derive(Parser)]
#[command(name = "fedlqr", version, about = "Federated LQR policy-gradient simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every (sweep point, seed) of a config and write traces, summary and manifest.
    Run {
        config: PathBuf,
        /// Output directory; overrides the config and FEDLQR_OUTPUT_DIR.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the analytic constants and run the inequality suites.
    Verify { config: PathBuf },
    /// Write (x, mean, std) series per sweep point from a summary CSV.
    EmitPlots { summary: PathBuf },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Io(_) => EXIT_CONFIG,
        Error::PreconditionFailed(_) | Error::UnstableSystem { .. } => EXIT_PRECONDITION,
        _ => EXIT_RUNTIME,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { config, out } => ExperimentConfig::load(&config).and_then(|cfg| {
            let dir = out.unwrap_or_else(|| resolve_output_dir(&cfg));
            let rep = run_experiment(&cfg, &dir)?;
            for f in &rep.summary.finals {
                println!(
                    "{}: final mean normalized gap {:.6e} (std {:.3e}, {} seeds, {} halted)",
                    f.point, f.mean, f.std, f.n_seeds, f.n_halted
                );
            }
            println!("wrote {} files to {}", rep.outputs.len() + 1, dir.display());
            Ok(ExitCode::SUCCESS)
        }),
        Cmd::Verify { config } => ExperimentConfig::load(&config).and_then(|cfg| {
            let rep = verify(&cfg)?;
            print!("{}", rep.render());
            Ok(if rep.passed() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_ORACLE) })
        }),
        Cmd::EmitPlots { summary } => emit_plot_data(&summary).map(|paths| {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
