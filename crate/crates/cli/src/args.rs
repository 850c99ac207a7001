use std::path::PathBuf;

use anova_rkhs::select::{GridConfig, Procedure, SelectionSettings, WeightMode};
use anova_rkhs::sim::KernelChoice;
use clap::{Args, Parser, Subcommand, ValueEnum};

/// One entry of a comma-separated list; surrounding spaces are allowed.
fn list_float(s: &str) -> Result<f64, String> {
    s.trim().parse().map_err(|_| format!("`{}` is not a number", s.trim()))
}

#[derive(Debug, Parser)]
#[command(name = "anova-rkhs", version, about = "Sparse ANOVA-RKHS metamodels and Sobol indices")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,

    /// Worker threads for parallel sections (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Flat `key = value` file of option defaults; command-line flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one group-sparse model at fixed penalties; writes model.json.
    Fit(FitArgs),
    /// Select penalties (and kernel) by test set or cross-validation; writes
    /// model.json and pe_surface.csv.
    Tune(TuneArgs),
    /// Sobol indices of a saved model; writes sobol.json.
    Sobol(SobolArgs),
    /// Predict a dataset with a saved model; writes predictions.csv.
    Predict(PredictArgs),
    /// Replicated g-function benchmark; writes benchmark.json and benchmark.csv.
    Benchmark(BenchmarkArgs),
    /// Simulate g-function learning, test and performance sets.
    Generate(GenerateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Weights {
    Unit,
    Nu,
    Order,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Quadratic,
    Empirical,
}

/// Kernel, candidate groups, weights and tuning grid.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// brownian, matern, gaussian or mixed.
    #[arg(long, default_value = "matern")]
    pub kernel: KernelChoice,

    /// Largest interaction order (default: min(3, d)).
    #[arg(long)]
    pub dmax: Option<usize>,

    #[arg(long, value_enum, default_value = "unit")]
    pub weights: Weights,

    /// Base c of the order weights c^(|v|-1).
    #[arg(long, default_value_t = 2.0)]
    pub order_base: f64,

    /// Number of mu levels mu_max 2^-l, l = 1..lmax.
    #[arg(long, default_value_t = 8)]
    pub lmax: usize,

    /// Comma-separated gamma values as multiples of mu_max / sqrt(n).
    #[arg(long, value_delimiter = ',', value_parser = list_float)]
    pub gamma_grid: Option<Vec<f64>>,

    /// JSON array of marginal specifications, one per input (default: uniform on [0, 1]).
    #[arg(long, value_name = "FILE")]
    pub marginals: Option<PathBuf>,
}

impl ModelArgs {
    pub fn settings(&self, procedure: Procedure) -> SelectionSettings {
        let defaults = GridConfig::default();
        SelectionSettings {
            procedure,
            dmax: self.dmax,
            weights: match self.weights {
                Weights::Unit => WeightMode::Unit,
                Weights::Nu => WeightMode::Nu,
                Weights::Order => WeightMode::Order(self.order_base),
            },
            grid: GridConfig {
                lmax: self.lmax,
                gamma_factors: self.gamma_grid.clone().unwrap_or(defaults.gamma_factors),
            },
            ..SelectionSettings::default()
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Training data, CSV with header y,x1,...,xd.
    #[arg(long)]
    pub input: PathBuf,

    /// Absolute mu.
    #[arg(long, conflicts_with = "mu_fraction")]
    pub mu: Option<f64>,

    /// mu as a fraction of mu_max.
    #[arg(long, default_value_t = 0.5)]
    pub mu_fraction: f64,

    /// Absolute gamma.
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,

    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub input: PathBuf,

    /// Held-out test set; without it V-fold cross-validation is used.
    #[arg(long, conflicts_with = "cv")]
    pub test_input: Option<PathBuf>,

    /// Number of cross-validation folds.
    #[arg(long, default_value_t = 5)]
    pub cv: usize,

    #[arg(long, default_value = "rdg")]
    pub procedure: Procedure,

    /// Seed of the fold assignment.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct SobolArgs {
    /// model.json written by fit or tune.
    #[arg(long)]
    pub model: PathBuf,

    #[arg(long, value_enum, default_value = "quadratic")]
    pub method: Method,

    /// Evaluation points of the empirical method.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,

    /// CSV with header y,x1,...,xd.
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Size of each simulated set.
    #[arg(long, default_value_t = 100)]
    pub n: usize,

    /// Noise standard deviation.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,

    /// Run a single procedure (default: both).
    #[arg(long)]
    pub procedure: Option<Procedure>,

    #[arg(long, default_value_t = 20)]
    pub replications: usize,

    /// Master seed of the replication seeds.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Comma-separated g-function coefficients (default: 0.2,0.6,0.8,100,100).
    #[arg(long, value_delimiter = ',', value_parser = list_float)]
    pub coefficients: Option<Vec<f64>>,

    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,

    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, value_delimiter = ',', value_parser = list_float)]
    pub coefficients: Option<Vec<f64>>,
}
