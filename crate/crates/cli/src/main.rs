//! Command-line driver for the two-region variance-to-mean toolkit.
//!
//! Five operations cover the full workflow: `analytic` evaluates the
//! closed-form Y(T) curve and its amplitudes, `simulate` produces
//! time-tagged detection trains and event tallies, `estimate` turns trains
//! into gate statistics (or tally tables into reaction intensities), `fit`
//! recovers amplitudes and decay constants from a curve, and `pipeline`
//! chains them into a single cross-checked report.
//!
//! Exit codes: 0 success; 2 validation or precondition failure (bad flags,
//! invalid configuration, too little data); 3 runtime cap breached
//! (population safety limit); 4 data inconsistency (imbalanced tallies,
//! malformed data files, manifest corruption, unresolvable fits).
//!
//! Every run writes a `manifest.json` recording input hashes, seed, tool
//! version, and output hashes; JSON outputs and train sidecars embed the
//! manifest's `run_id`. Reruns with identical inputs produce byte-identical
//! data files.

mod commands;
mod manifest;

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fmt;
use std::path::PathBuf;

/// Failures mapped onto the documented exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Exit 2: invalid flags, configuration, or precondition.
    Validation(String),
    /// Exit 3: a runtime safety cap was breached.
    RuntimeCap(String),
    /// Exit 4: inputs are internally inconsistent or corrupted.
    DataInconsistency(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::RuntimeCap(_) => 3,
            CliError::DataInconsistency(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "validation error: {msg}"),
            CliError::RuntimeCap(msg) => write!(f, "runtime cap: {msg}"),
            CliError::DataInconsistency(msg) => write!(f, "data inconsistency: {msg}"),
        }
    }
}

const SCHEMA_HELP: &str = "\
FILE SCHEMAS
  system config (JSON):   {\"region1\": {\"capture_intensity\", \"fission_intensity\",
                          \"transfer_out_intensity\", \"detection_intensity\", \"induced_nu1\",
                          \"induced_nu2\"}, \"region2\": {same minus detection}, \"source\":
                          {\"strength\", \"emission_nu1\", \"emission_nu2\", \"emission_pmf\"?},
                          \"fission_pmf_1\"?, \"fission_pmf_2\"?}. PMFs are [[count, prob], …]
                          and are required wherever the simulator must sample that channel.
  sim config (JSON):      {\"params\": <system config>, \"t_record\", \"seed\",
                          \"t_warmup\"?, \"max_population\"?, \"replicas\"?} — accepted by
                          `simulate --config` as an alternative to flags; supplying both a
                          field and its flag is an error.
  train (text):           one detection timestamp per line, full precision, ascending,
                          relative to the recording window start. A sidecar
                          `<train>.meta.json` holds {\"seed\", \"replica_index\", \"t_record\",
                          \"generator_id\", \"params_hash\", \"n_detections\", \"run_id\"?}.
  curve CSV:              header `gate_time,y_value` or `gate_time,y_value,stderr`
                          (all rows with stderr or none).
  gate statistics CSV:    header `gate_width,n_gates,mean_count,variance,y_value,stderr,
                          low_confidence`.
  decay CSV:              header `time,rate,stderr` (bin midpoints).
  residuals CSV:          header `gate_time,observed,fitted,weighted_residual`
                          (`time,…` for die-away fits).
  tally table (JSON):     counts {\"n_source_events\", \"n_source_neutrons\",
                          \"n_fission_events_1\", \"n_fission_neutrons_1\", \"n_fission_events_2\",
                          \"n_fission_neutrons_2\", \"n_capture_1\", \"n_capture_2\",
                          \"n_transfer_1to2\", \"n_transfer_2to1\", \"n_detected\", \"n_lost\"}
                          plus exposures {\"exposure_n1\", \"exposure_n2\"}; raw counts or
                          per-source-neutron fractions (the inversion is scale-free).
  manifest (JSON):        {\"command\", \"tool_version\", \"generator_id\", \"seed\"?,
                          \"inputs\": [{\"path\", \"sha256\"}…], \"run_id\", \"created_unix\",
                          \"outputs\": [{\"path\", \"sha256\"}…]}. `run_id` hashes the
                          reproducibility core; verify with `pipeline --check-manifest`.

All numeric output is full double precision (17 significant digits) and
locale-independent. All file writes are atomic (write to a temporary file,
then rename).";

#[derive(Parser)]
#[command(
    name = "twinpoint",
    version,
    about = "Two-region variance-to-mean (Feynman-alpha) toolkit: closed forms, exact simulation, estimation, and fitting",
    after_long_help = SCHEMA_HELP,
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the closed-form Y(T) curve and amplitudes for a configuration
    Analytic(AnalyticArgs),
    /// Simulate the branching process, writing detection trains and tallies
    Simulate(SimulateArgs),
    /// Estimate gate statistics from trains, or intensities from a tally table
    Estimate(EstimateArgs),
    /// Fit a two-exponential variance-to-mean curve, or a die-away histogram
    Fit(FitArgs),
    /// Run analytic → simulate → estimate → fit and cross-check the results
    Pipeline(PipelineArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurveMode {
    /// Amplitudes from the moment solution (identities hold exactly)
    Canonical,
    /// Amplitudes transcribed verbatim from the published formulation
    Published,
    /// Evaluate both modes and report deviations point by point
    Compare,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GateModeArg {
    /// Adjacent disjoint gates of exactly the requested width
    NonOverlapping,
    /// Aggregate base cells; widths snap to multiples of the smallest width
    Bunching,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SetupArg {
    /// Self-interrogation: source neutrons enter region 1
    Ddsi,
    /// Active interrogation: source neutrons enter region 2
    Ddaa,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FitKind {
    /// Two-exponential variance-to-mean curve (curve CSV input)
    Feynman,
    /// Single-exponential decay histogram (decay CSV input)
    DieAway,
}

/// Log-spaced gate grid flags shared by several commands.
#[derive(Args, Clone)]
pub struct GateGridArgs {
    /// Smallest gate width of the log-spaced grid
    #[arg(long, conflicts_with = "gate_list")]
    pub(crate) gate_min: Option<f64>,
    /// Largest gate width of the log-spaced grid
    #[arg(long, conflicts_with = "gate_list")]
    pub(crate) gate_max: Option<f64>,
    /// Number of log-spaced gate widths
    #[arg(long, conflicts_with = "gate_list")]
    pub(crate) gates: Option<usize>,
    /// Explicit comma-separated gate widths (replaces the grid flags)
    #[arg(long, value_delimiter = ',')]
    pub(crate) gate_list: Option<Vec<f64>>,
}

#[derive(Args)]
pub(crate) struct AnalyticArgs {
    /// System configuration JSON
    #[arg(long)]
    pub(crate) config: PathBuf,
    /// Which amplitude formulation to evaluate
    #[arg(long, value_enum, default_value = "canonical")]
    pub(crate) mode: CurveMode,
    #[command(flatten)]
    pub(crate) grid: GateGridArgs,
    /// Directory for curve.csv, amplitudes.json (or comparison outputs), manifest.json
    #[arg(long)]
    pub(crate) out_dir: PathBuf,
}

#[derive(Args)]
pub(crate) struct SimulateArgs {
    /// System configuration JSON (or a full sim config with embedded controls)
    #[arg(long)]
    pub(crate) config: PathBuf,
    /// Master seed; replica i draws from generator stream i
    #[arg(long)]
    pub(crate) seed: Option<u64>,
    /// Recorded duration per replica
    #[arg(long)]
    pub(crate) t_record: Option<f64>,
    /// Relaxation time before recording; default 30/ω₁
    #[arg(long)]
    pub(crate) t_warmup: Option<f64>,
    /// Number of independent replicas
    #[arg(long)]
    pub(crate) replicas: Option<u32>,
    /// Abort (exit 3) if N₁+N₂ ever exceeds this cap
    #[arg(long)]
    pub(crate) max_population: Option<u64>,
    /// Directory for replica_*.train (+ sidecars), tally outputs, manifest.json
    #[arg(long)]
    pub(crate) out_dir: PathBuf,
}

#[derive(Args)]
pub(crate) struct EstimateArgs {
    /// Detection train file; repeat for an ensemble (pooled statistics)
    #[arg(long, num_args = 1.., conflicts_with = "tally")]
    pub(crate) train: Vec<PathBuf>,
    /// Tally table JSON to invert into reaction intensities
    #[arg(long)]
    pub(crate) tally: Option<PathBuf>,
    /// Source placement for the tally balance check
    #[arg(long, value_enum, requires = "tally")]
    pub(crate) setup: Option<SetupArg>,
    /// First factorial moment of induced fission, for the ν_eff consistency
    /// ratio in the intensity report
    #[arg(long, requires = "tally")]
    pub(crate) nu1: Option<f64>,
    #[command(flatten)]
    pub(crate) grid: GateGridArgs,
    /// Gate partitioning scheme
    #[arg(long, value_enum, default_value = "non-overlapping")]
    pub(crate) gate_mode: GateModeArg,
    /// Observation window end for trains without sidecars (window starts at 0)
    #[arg(long)]
    pub(crate) window_end: Option<f64>,
    /// Directory for curve.csv + stats.csv (trains) or intensities.json (tally)
    #[arg(long)]
    pub(crate) out_dir: PathBuf,
}

#[derive(Args)]
pub(crate) struct FitArgs {
    /// Input curve CSV (feynman) or decay CSV (die-away)
    #[arg(long)]
    pub(crate) curve: PathBuf,
    /// Model to fit
    #[arg(long, value_enum, default_value = "feynman")]
    pub(crate) kind: FitKind,
    /// Directory for fit.json, residuals.csv, manifest.json
    #[arg(long)]
    pub(crate) out_dir: PathBuf,
}

#[derive(Args)]
pub(crate) struct PipelineArgs {
    /// System configuration JSON (PMFs required; the pipeline simulates)
    #[arg(long, required_unless_present = "check_manifest", conflicts_with = "check_manifest")]
    pub(crate) config: Option<PathBuf>,
    /// Master seed for the simulation stage
    #[arg(long, required_unless_present = "check_manifest", conflicts_with = "check_manifest")]
    pub(crate) seed: Option<u64>,
    /// Recorded duration per replica
    #[arg(long, required_unless_present = "check_manifest", conflicts_with = "check_manifest")]
    pub(crate) t_record: Option<f64>,
    /// Number of independent replicas
    #[arg(long, default_value_t = 8, conflicts_with = "check_manifest")]
    pub(crate) replicas: u32,
    /// Second configuration to compare plateaus against (e.g. the other setup)
    #[arg(long, conflicts_with = "check_manifest")]
    pub(crate) compare_config: Option<PathBuf>,
    /// Directory for all stage outputs and report.json
    #[arg(long, required_unless_present = "check_manifest", conflicts_with = "check_manifest")]
    pub(crate) out_dir: Option<PathBuf>,
    /// Verify a previously written manifest instead of running the pipeline:
    /// recompute the run id and every output hash; exit 4 on any mismatch
    #[arg(long, value_name = "MANIFEST")]
    pub(crate) check_manifest: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analytic(args) => commands::analytic(args),
        Command::Simulate(args) => commands::simulate(args),
        Command::Estimate(args) => commands::estimate(args),
        Command::Fit(args) => commands::fit(args),
        Command::Pipeline(args) => commands::pipeline(args),
    };
    if let Err(error) = result {
        eprintln!("{error}");
        std::process::exit(error.exit_code());
    }
}
