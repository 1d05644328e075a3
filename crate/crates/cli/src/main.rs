//! `ppinn`: train, evaluate and verify the piezoelectric PINN solver.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ppinn_cli::config::{Overrides, Preset};
use ppinn_cli::{eval, figures, train, verify};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "ppinn", version, about = "Physics-informed neural network for 1D piezoelectric waves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunFlags {
    /// TOML run configuration; unspecified keys come from the preset.
    #[arg(long, env = "PPINN_CONFIG")]
    config: Option<PathBuf>,
    /// Base preset (overrides the file's `preset` key).
    #[arg(long, value_enum, env = "PPINN_PRESET")]
    preset: Option<Preset>,
    /// Master seed.
    #[arg(long, env = "PPINN_SEED")]
    seed: Option<u64>,
    /// Floating-point precision in bits.
    #[arg(long, env = "PPINN_PRECISION", value_parser = ["32", "64"])]
    precision: Option<String>,
    /// Output directory.
    #[arg(long, env = "PPINN_OUT")]
    out: Option<PathBuf>,
}

impl RunFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset,
            seed: self.seed,
            precision: self.precision.as_deref().map(|p| p.parse().expect("validated by clap")),
            out_dir: self.out.clone(),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write checkpoints, history.csv and resolved-config.toml.
    Train {
        #[command(flatten)]
        run: RunFlags,
        /// Print a progress line every this many iterations (0 disables).
        #[arg(long, default_value_t = 100, env = "PPINN_LOG_EVERY")]
        log_every: usize,
    },
    /// Evaluate a checkpoint on a dense grid; writes summary.txt, errors.csv, slices.csv.
    Eval {
        /// Checkpoint file or a run directory containing model.ckpt.
        #[arg(long, env = "PPINN_CHECKPOINT", required_unless_present = "exact_oracle")]
        checkpoint: Option<PathBuf>,
        #[arg(long, env = "PPINN_NX")]
        nx: Option<usize>,
        #[arg(long, env = "PPINN_NT")]
        nt: Option<usize>,
        /// Evaluate the closed-form solution instead of a network.
        #[arg(long)]
        exact_oracle: bool,
        /// Output directory (defaults to the checkpoint's directory).
        #[arg(long, env = "PPINN_OUT")]
        out: Option<PathBuf>,
        /// Configuration supplying slice times and grid defaults.
        #[arg(long, env = "PPINN_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Run the consistency checks and print a pass/fail table.
    Verify {
        /// Override the coupling constant (breaks consistency unless it equals -eps0).
        #[arg(long, allow_hyphen_values = true)]
        e33: Option<f64>,
        /// Override the density.
        #[arg(long)]
        rho: Option<f64>,
        /// Grid sizes for the finite-difference convergence check.
        #[arg(long, value_delimiter = ',', default_values_t = [51usize, 101, 201])]
        fdm_nx: Vec<usize>,
        /// Seed of the random network used by the derivative checks.
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Emit plotting scripts for the CSVs of an evaluated run.
    ExportFigures {
        /// Directory holding errors.csv and slices.csv.
        run_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { run, log_every } => train::run(run.config.as_deref(), &run.overrides(), log_every),
        Command::Eval {
            checkpoint,
            nx,
            nt,
            exact_oracle,
            out,
            config,
        } => eval::run(eval::EvalArgs {
            checkpoint,
            nx,
            nt,
            exact_oracle,
            out,
            config,
        }),
        Command::Verify { e33, rho, fdm_nx, seed } => verify::run(e33, rho, &fdm_nx, seed),
        Command::ExportFigures { run_dir } => figures::run(&run_dir),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
