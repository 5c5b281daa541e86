use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semprobe_cli::{cmd_sweep, cmd_synth, cmd_validate, SynthArgs};

#[derive(Parser)]
#[command(name = "semprobe", version, about = "Linear subspace probes over layer-wise sentence embeddings")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check manifests, checksums and labels of every dataset under a path.
    Validate { store: PathBuf },
    /// Run the sweep described by a run-spec JSON file.
    Sweep {
        run_spec: PathBuf,
        /// Worker threads; defaults to all cores. Results do not depend on it.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write synthetic stores with a planted metric.
    Synth {
        /// Latent dimension.
        #[arg(long)]
        k: Option<usize>,
        /// Embedding dimension.
        #[arg(long)]
        d: Option<usize>,
        /// Sentences per task.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        sigma: Option<f64>,
        /// Comma-separated signal ratios in [0, 1], one per layer.
        #[arg(long, value_delimiter = ',')]
        layers: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Validate { store } => cmd_validate(&store, &mut std::io::stdout().lock()),
        Command::Sweep { run_spec, jobs } => {
            let failed = cmd_sweep(&run_spec, jobs)?;
            if failed > 0 {
                eprintln!("warning: {failed} cell(s) failed; see grid.json");
            }
            Ok(true)
        }
        Command::Synth {
            k,
            d,
            n,
            sigma,
            layers,
            seed,
            out,
        } => {
            let args = SynthArgs {
                k,
                d,
                n,
                sigma,
                layers,
                seed,
            };
            for (task, dir) in cmd_synth(&args, &out)? {
                println!("{task}\t{}", dir.display());
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
