//! Command-line argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::io::TargetColumn;

#[derive(Debug, Parser)]
#[command(name = "geomreg", version, about = "Covariance-aware regularization experiments")]
pub struct Cli {
    /// Worker threads; 0 uses every available core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run Monte Carlo experiments described by a TOML config.
    Simulate(SimulateArgs),
    /// Fit and evaluate a penalized network on a CSV file.
    Fit(FitArgs),
    /// Cross-validate a penalty grid on a CSV file.
    Tune(TuneArgs),
    /// Check the asymptotic and reduction results numerically.
    Validate(ValidateArgs),
    /// Evaluate a penalty on a two-dimensional grid.
    Contours(ContoursArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Config file.
    #[arg(required_unless_present = "manifest", conflicts_with = "manifest")]
    pub config: Option<PathBuf>,

    /// Replay the resolved config stored in a manifest (file or run directory).
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    /// Override a config entry, e.g. `--set train.epochs=50` or `--set scenario.0.rho=[0.5]`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Run directory.
    #[arg(long, default_value = "runs/simulate")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskArg {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Cartesian,
    CoordinateWise,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DataArgs {
    /// CSV file; a non-numeric first row is treated as a header.
    #[arg(long)]
    pub data: PathBuf,

    /// Target column, by header name or zero-based index.
    #[arg(long)]
    #[serde(serialize_with = "ser_target")]
    pub target: TargetColumn,

    #[arg(long, value_enum, default_value_t = TaskArg::Regression)]
    pub task: TaskArg,

    /// Penalty family: none, ridge, lasso, elastic_net, covridge, sparridge.
    #[arg(long)]
    pub method: String,
}

fn ser_target<S: serde::Serializer>(t: &TargetColumn, s: S) -> Result<S::Ok, S::Error> {
    match t {
        TargetColumn::Name(n) => s.serialize_str(n),
        TargetColumn::Index(i) => s.serialize_u64(*i as u64),
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "64,32")]
    pub hidden: Vec<usize>,

    #[arg(long, default_value_t = 200)]
    pub epochs: usize,

    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,

    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,

    #[arg(long = "lr", default_value_t = 1e-3)]
    pub learning_rate: f64,

    /// Gram stabilization δ.
    #[arg(long, default_value_t = geomreg_core::gram::DEFAULT_DELTA)]
    pub delta: f64,

    /// Early-stopping patience in epochs; enables a validation split.
    #[arg(long)]
    pub patience: Option<usize>,

    /// Share of training rows held out for early stopping.
    #[arg(long, default_value_t = 0.1, requires = "patience")]
    pub validation_fraction: f64,

    /// Keep the `m` features with the largest ANOVA F statistic (classification).
    #[arg(long = "top")]
    pub top: Option<usize>,

    /// Master seed; falls back to GEOMREG_SEED, then 1.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GridArgs {
    /// Candidate values shared by every penalty parameter.
    #[arg(long, value_delimiter = ',', default_values_t = geomreg_core::tune::DEFAULT_GRID.to_vec())]
    pub grid: Vec<f64>,

    /// Cross-validation folds used for tuning.
    #[arg(long, default_value_t = 10)]
    pub tune_folds: usize,

    #[arg(long, default_value_t = 1)]
    pub tune_repeats: usize,

    #[arg(long, value_enum, default_value_t = ModeArg::Cartesian)]
    pub mode: ModeArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Fixed penalty parameters in the family's order.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub params: Vec<f64>,

    /// Choose parameters by cross-validated grid search instead.
    #[arg(long, conflicts_with = "params")]
    pub tune: bool,

    #[command(flatten)]
    pub grid: GridArgs,

    #[command(flatten)]
    pub train: TrainArgs,

    /// Test share of the hold-out split (regression).
    #[arg(long, default_value_t = 0.3)]
    pub test_fraction: f64,

    /// Outer cross-validation folds (classification).
    #[arg(long, default_value_t = 10)]
    pub folds: usize,

    /// Outer cross-validation repetitions (classification).
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,

    /// Screen features once on all rows before cross-validation (leaks labels; for comparison only).
    #[arg(long)]
    pub screen_full_data: bool,

    /// Run directory.
    #[arg(long, default_value = "runs/fit")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TuneArgs {
    #[command(flatten)]
    pub data: DataArgs,

    #[command(flatten)]
    pub grid: GridArgs,

    #[command(flatten)]
    pub train: TrainArgs,

    /// Run directory.
    #[arg(long, default_value = "runs/tune")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Theorem {
    /// Sandwich covariance of the covariance-ridge estimator.
    #[value(name = "t1")]
    #[serde(rename = "t1")]
    T1,
    /// Sparse estimator at γ = 0 against the closed form.
    #[value(name = "t2-gamma0")]
    #[serde(rename = "t2-gamma0")]
    T2Gamma0,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ValidateArgs {
    #[arg(value_enum)]
    pub theorem: Theorem,

    #[arg(long, default_value_t = 2000)]
    pub n: usize,

    #[arg(long, default_value_t = 5)]
    pub p: usize,

    /// Noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,

    #[arg(long, default_value_t = 0.3)]
    pub lambda1: f64,

    #[arg(long, default_value_t = 0.1)]
    pub lambda2: f64,

    #[arg(long, default_value_t = geomreg_core::gram::DEFAULT_DELTA)]
    pub delta: f64,

    /// Monte Carlo replications (t1).
    #[arg(long, default_value_t = 5000)]
    pub replications: usize,

    /// Relative Frobenius tolerance on the covariance (t1).
    #[arg(long, default_value_t = 0.1)]
    pub tolerance: f64,

    /// Random problems to check (t2-gamma0).
    #[arg(long, default_value_t = 50)]
    pub problems: usize,

    /// Master seed; falls back to GEOMREG_SEED, then 1.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Run directory.
    #[arg(long, default_value = "runs/validate")]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisArg {
    Canonical,
    Eigen,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ContoursArgs {
    /// Penalty family.
    #[arg(long)]
    pub method: String,

    /// Penalty parameters in the family's order.
    #[arg(long, value_delimiter = ',')]
    pub params: Vec<f64>,

    /// Eigenvalues of the stabilized Gram matrix.
    #[arg(long, value_delimiter = ',', default_value = "1,1")]
    pub eigenvalues: Vec<f64>,

    /// Rotation of the Gram eigenvectors, in radians.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub angle: f64,

    #[arg(long, default_value_t = geomreg_core::gram::DEFAULT_DELTA)]
    pub delta: f64,

    /// Square grid range `lo,hi`.
    #[arg(long, value_delimiter = ',', default_value = "-2,2", allow_hyphen_values = true)]
    pub range: Vec<f64>,

    /// Points per axis.
    #[arg(long, default_value_t = 101)]
    pub resolution: usize,

    #[arg(long, value_enum, default_value_t = BasisArg::Canonical)]
    pub basis: BasisArg,

    /// Also draw this many level sets as SVG.
    #[arg(long)]
    pub svg_levels: Option<usize>,

    /// Run directory.
    #[arg(long, default_value = "runs/contours")]
    pub out: PathBuf,
}
