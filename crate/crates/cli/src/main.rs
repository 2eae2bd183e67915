mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use linker_core::evaluation::Level;
use linker_core::metrics::{DEFAULT_RECALLS, DEFAULT_THRESHOLDS};
use linker_core::model::ProteinMode;

use crate::error::CliError;

#[derive(Parser)]
#[command(
    name = "linker",
    version,
    about = "Residue/functional-group interaction prediction pipeline"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Seed for parameter initialization, shuffling and dropout; overrides the config file
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads, 0 for one per core. Outputs do not depend on it
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// Fail on records that would otherwise be skipped with a warning
    #[arg(long, global = true, default_value_t = false)]
    pub strict: bool,
}

#[derive(Args, Debug, Clone)]
pub struct CurveArgs {
    /// Directory of prediction JSON files
    #[arg(long)]
    pub preds: PathBuf,
    /// Labels JSON-lines file
    #[arg(long)]
    pub labels: PathBuf,
    /// Pooling level: residue or pair
    #[arg(long, default_value = "residue")]
    pub level: Level,
    /// Gaussian width, in residues, of the smoothed labels behind weighted precision
    #[arg(long, default_value_t = 2.0)]
    pub sigma: f64,
    /// Confidence thresholds for weighted precision, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_THRESHOLDS.to_vec())]
    pub thresholds: Vec<f64>,
    /// Recall levels for enrichment, comma separated
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RECALLS.to_vec())]
    pub recalls: Vec<f64>,
    /// Manifest with affinities; adds RMSE against predicted affinities
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Decompose SMILES into functional groups (one JSON object per molecule)
    ParseFg {
        /// SMILES file, one molecule per line with an optional id after whitespace
        #[arg(long)]
        input: PathBuf,
        /// Output JSON-lines file, `-` for stdout
        #[arg(long, default_value = "-")]
        output: PathBuf,
    },
    /// Validate a manifest and cache its ligand decompositions
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        /// Cache directory
        #[arg(long, env = "LINKER_CACHE", default_value = ".linker-cache")]
        cache: PathBuf,
        /// Protein features: fallback (learned from sequence) or file (LNKE embeddings)
        #[arg(long, default_value = "fallback", value_parser = parse_mode)]
        protein: ProteinMode,
    },
    /// Train the interaction network on labelled complexes
    TrainInteraction {
        /// TOML training config; stage defaults when absent (30 epochs, batch 2, lr 2e-5)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Training manifest
        #[arg(long)]
        manifest: PathBuf,
        /// Validation manifest, used to keep the best parameters
        #[arg(long)]
        val: Option<PathBuf>,
        /// Checkpoint path, rewritten after every epoch
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV log
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from the checkpoint at --out if it exists
        #[arg(long, default_value_t = false)]
        resume: bool,
    },
    /// Train the affinity head on top of a frozen interaction backbone
    TrainAffinity {
        /// TOML training config; stage defaults when absent (80 epochs, batch 16, lr 2e-5)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Interaction checkpoint providing the frozen backbone
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        val: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value_t = false)]
        resume: bool,
    },
    /// Write one prediction JSON per complex, plus affinity.csv for affinity checkpoints
    Predict {
        /// Interaction or affinity checkpoint
        #[arg(long)]
        backbone: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predictions against labels and print an evaluation report
    Evaluate {
        #[command(flatten)]
        curves: CurveArgs,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gaussian-smoothed residue labels as CSV
    SmoothLabels {
        #[arg(long)]
        labels: PathBuf,
        /// Gaussian width in residues
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        /// Output CSV, `-` for stdout
        #[arg(long, default_value = "-")]
        out: PathBuf,
    },
    /// Write PR, ROC and weighted-precision curves as CSV plus a summary report
    ExportCurves {
        #[command(flatten)]
        curves: CurveArgs,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_mode(s: &str) -> Result<ProteinMode, String> {
    match s {
        "fallback" => Ok(ProteinMode::Fallback),
        "file" => Ok(ProteinMode::File),
        _ => Err(format!("unknown protein mode '{s}' (expected fallback or file)")),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.global.jobs)
        .build_global()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    let g = &cli.global;
    match cli.command {
        Command::ParseFg { input, output } => commands::parse_fg(g, &input, &output),
        Command::Featurize {
            manifest,
            cache,
            protein,
        } => commands::featurize(&manifest, &cache, protein),
        Command::TrainInteraction {
            config,
            manifest,
            val,
            out,
            log,
            resume,
        } => commands::train_interaction(
            g,
            config.as_deref(),
            &manifest,
            val.as_deref(),
            &out,
            log.as_deref(),
            resume,
        ),
        Command::TrainAffinity {
            config,
            backbone,
            manifest,
            val,
            out,
            log,
            resume,
        } => commands::train_affinity(
            g,
            config.as_deref(),
            &backbone,
            &manifest,
            val.as_deref(),
            &out,
            log.as_deref(),
            resume,
        ),
        Command::Predict {
            backbone,
            manifest,
            out,
        } => commands::predict(&backbone, &manifest, &out),
        Command::Evaluate { curves, out } => commands::evaluate(g, &curves, out.as_deref()),
        Command::SmoothLabels { labels, sigma, out } => commands::smooth_labels(&labels, sigma, &out),
        Command::ExportCurves { curves, out } => commands::export_curves(g, &curves, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            let err = CliError::Usage(first.to_string());
            eprintln!("{}", err.line());
            return ExitCode::from(err.code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.code() as u8)
        }
    }
}
