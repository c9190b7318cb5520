//! `aspca` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical failure.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use aspca::Variant;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "aspca",
    version,
    about = "Interpretable sparse-PCA anomaly detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the 7-feature synthetic data set (500 normal rows, 15 anomalies).
    Synth(SynthArgs),
    /// Fit preprocessing and an abnormal subspace, then save the model.
    Fit(FitArgs),
    /// Score every row and write the SPE scores.
    Detect(DetectArgs),
    /// Explain flagged rows through their abnormal components.
    Interpret(InterpretArgs),
    /// ROC curve and AUC, or a (d, λ) sweep grid.
    Eval(EvalArgs),
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Column config for the CSV; defaults to `<out stem>.columns.json`.
    #[arg(long)]
    pub out_config: Option<PathBuf>,
}

#[derive(Args)]
pub struct DataArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Column config JSON. Without one, `label` and `category` columns are used when present.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Seed for the global-optimisation restarts.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Keep the best iterate when the solver hits max-iter instead of failing.
    #[arg(long)]
    pub allow_unconverged: bool,
}

#[derive(Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// pca, f, b, fg or bg.
    #[arg(long, value_parser = parse_variant)]
    pub variant: Variant,
    /// Number of abnormal components.
    #[arg(long)]
    pub d: usize,
    #[arg(long, default_value_t = 0.0)]
    pub lambda: f64,
    #[arg(long)]
    pub out_model: PathBuf,
    /// Fixed SPE threshold.
    #[arg(long, conflicts_with_all = ["quantile", "target_tpr"])]
    pub threshold: Option<f64>,
    /// Threshold at this quantile of training SPE.
    #[arg(long, default_value_t = 0.95)]
    pub quantile: f64,
    /// Threshold flagging this fraction of labeled anomalies.
    #[arg(long, conflicts_with = "quantile")]
    pub target_tpr: Option<f64>,
    /// Train on every row, not only rows labeled normal.
    #[arg(long)]
    pub include_anomalies: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Override the model's threshold (`inf` flags nothing).
    #[arg(long, conflicts_with = "quantile")]
    pub threshold: Option<f64>,
    /// Threshold at this quantile of the scored rows.
    #[arg(long)]
    pub quantile: Option<f64>,
    #[arg(long)]
    pub out_scores: PathBuf,
}

#[derive(Args)]
pub struct InterpretArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Loadings below this magnitude are left out of rendered components.
    #[arg(long, default_value_t = 0.1)]
    pub cutoff: f64,
    #[arg(long)]
    pub out_report: PathBuf,
    #[arg(long)]
    pub svg_heatmap: Option<PathBuf>,
    #[arg(long)]
    pub heatmap_csv: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Label column (overrides the config's).
    #[arg(long)]
    pub labels: Option<String>,
    /// ROC points CSV, or the grid CSV in sweep mode.
    #[arg(long)]
    pub out: PathBuf,
    /// Refit for every d in `a..b` (inclusive).
    #[arg(long, value_parser = parse_range)]
    pub sweep_d: Option<(usize, usize)>,
    /// Refit for each λ in a comma-separated list.
    #[arg(long, value_delimiter = ',')]
    pub sweep_lambda: Option<Vec<f64>>,
    /// Train sweep fits on every row, not only rows labeled normal.
    #[arg(long)]
    pub include_anomalies: bool,
    #[command(flatten)]
    pub solver: SolverArgs,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected a..b, got '{s}'"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    if a > b {
        return Err(format!("empty range {s}"));
    }
    Ok((a, b))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Fit(a) => commands::fit(a),
        Command::Detect(a) => commands::detect(a),
        Command::Interpret(a) => commands::interpret(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let numerical = e
                .chain()
                .find_map(|c| c.downcast_ref::<aspca::Error>())
                .is_some_and(aspca::Error::is_numerical);
            ExitCode::from(if numerical { 3 } else { 2 })
        }
    }
}
