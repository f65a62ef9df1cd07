use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fdisc::artifacts::{Workspace, TRUTH};
use fdisc::commands;
use fdisc::config::{Config, Overrides};
use fdisc::Result;
use fdisc_core::pipeline::ValidationReport;
use fdisc_core::validate;

#[derive(Debug, Parser)]
#[command(name = "fdisc", version, about = "Expert-guided ranking and organization of multivariate data")]
struct Cli {
    /// JSON config; defaults apply to every key left out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for the synthetic generator and the net ensemble.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Tree level whose folders become pseudopoints (1 is the root).
    #[arg(long, global = true)]
    level: Option<usize>,
    /// Number of nets in the ensemble.
    #[arg(long = "k-nets", global = true)]
    k_nets: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with known ground truth.
    Synth,
    /// Standardize, depolarize and weight the data; pick the reference set.
    Preprocess,
    /// Build the coupled point and observation trees and impute.
    Organize,
    /// Export pseudopoints for labeling or import their scores.
    Pseudopoints {
        #[command(subcommand)]
        action: PseudoAction,
    },
    /// Train the net ensemble on the imported labels.
    Train,
    /// Diffusion embedding of the ensemble representation.
    Embed,
    /// Locally whitened (standardized) embedding.
    Standardize,
    /// Place new points in both embeddings.
    Extend {
        /// Data CSV with the training features.
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the validation battery.
    Validate,
    /// Write per-point plot data.
    Report,
    /// Run every stage from preprocess to validate, auto-labeling from a
    /// truth file (default: the one `synth` wrote).
    Run {
        #[arg(long = "auto-label")]
        auto_label: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum PseudoAction {
    /// Write the pseudopoint CSV; with --auto-label also score it.
    Export {
        /// Truth JSON; each folder gets the mean truth of its members.
        #[arg(long = "auto-label")]
        auto_label: Option<PathBuf>,
    },
    /// Read a scored pseudopoint CSV.
    Import { csv: Option<PathBuf> },
}

fn print_summary(r: &ValidationReport) {
    if let (Some(a), Some(b)) = (&r.mass_dnn, &r.mass_euclidean) {
        println!("neighborhood mass: dnn {:.3}, euclidean {:.3}", a.mean, b.mean);
    }
    if let (Some(a), Some(b)) = (&r.dim_dnn, &r.dim_euclidean) {
        println!("spectral dimension: dnn {}, euclidean {}", a.dim, b.dim);
    }
    if let Some(b) = &r.bound {
        println!("separation bound: lhs {:.6}, rhs {:.6}, holds {}", b.lhs, b.rhs, b.holds);
    }
    if let Some(c) = &r.confusion {
        println!("confusion (rows: g quartile, columns: f quartile):\n{}", validate::format_confusion(c));
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.apply(&Overrides { seed: cli.seed, out: cli.out, level: cli.level, k_nets: cli.k_nets })?;
    let ws = Workspace::new(cfg)?;
    match cli.command {
        Command::Synth => commands::synth(&ws),
        Command::Preprocess => commands::preprocess(&ws),
        Command::Organize => commands::organize(&ws),
        Command::Pseudopoints { action: PseudoAction::Export { auto_label } } => commands::pseudopoints_export(&ws, auto_label.as_deref()),
        Command::Pseudopoints { action: PseudoAction::Import { csv } } => commands::pseudopoints_import(&ws, csv.as_deref()),
        Command::Train => commands::train(&ws),
        Command::Embed => commands::embed(&ws),
        Command::Standardize => commands::standardize(&ws),
        Command::Extend { input, output } => {
            let out = commands::extend(&ws, &input, output.as_deref())?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Validate => commands::validate(&ws).map(|r| print_summary(&r)),
        Command::Report => commands::report(&ws),
        Command::Run { auto_label } => {
            let truth = auto_label.unwrap_or_else(|| ws.path(TRUTH));
            commands::run_all(&ws, &truth).map(|r| print_summary(&r))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Usage errors are user errors (status 1); help and version exit 0.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
