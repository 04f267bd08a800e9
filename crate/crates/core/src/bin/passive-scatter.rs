use clap::{Parser, Subcommand};
use passive_scatter::cli::{cmd_invert, cmd_simulate, cmd_verify, Experiment};
use passive_scatter::inversion::InversionMode;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "passive-scatter", version, about = "Passive imaging of obstacles and random sources from correlation data")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesise samples and the empirical covariance for a configuration.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Reconstruct from a simulated or measured covariance.
    Invert {
        #[arg(long)]
        config: PathBuf,
        /// Directory containing cobs.phlm, or the file itself.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// source | shape | joint | newton-cg (default: the config's mode).
        #[arg(long)]
        mode: Option<InversionMode>,
    },
    /// Run the oracle suite.
    Verify {
        #[arg(long)]
        quick: bool,
    },
}

fn run(cli: Cli) -> passive_scatter::Result<bool> {
    match cli.command {
        Command::Simulate { config, out } => {
            let exp = Experiment::load(&config)?;
            let dir = exp.output_dir(out.as_deref());
            let files = cmd_simulate(&exp, &dir)?;
            println!("wrote {}, {}, {}", files.samples.display(), files.cobs.display(), files.meta.display());
        }
        Command::Invert { config, data, out, mode } => {
            let exp = Experiment::load(&config)?;
            let dir = exp.output_dir(out.as_deref());
            let mode = mode.unwrap_or(exp.config.inversion.mode);
            let result = cmd_invert(&exp, mode, &data, &dir)?;
            println!("stop reason: {}", result.record.stop_reason);
            if let Some(r) = result.record.final_weighted_residual {
                println!("final weighted residual: {r:.6e}");
            }
            if let Some(e) = result.comparison.q_relative_error {
                println!("relative q error vs truth: {e:.4}");
            }
            if let Some(h) = result.comparison.hausdorff_distance {
                println!("Hausdorff distance vs truth: {h:.4}");
            }
            for f in &result.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Verify { quick } => {
            let (_, ok) = cmd_verify(quick, std::io::stdout())?;
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
