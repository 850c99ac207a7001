//! Sparse ANOVA-RKHS metamodels fitted with a ridge-group-sparse penalty,
//! tuning-parameter selection and Sobol sensitivity indices.
//!
//! ```no_run
//! use std::sync::Arc;
//!
//! use anova_rkhs::select::select;
//! use anova_rkhs::sensitivity::sobol_report;
//! use anova_rkhs::{Dataset, KernelFamily, KernelSet, SelectionSettings, Validation};
//!
//! # fn main() -> anova_rkhs::Result<()> {
//! let train = Dataset::load_csv("train.csv", None)?;
//! let kernels = Arc::new(KernelSet::unit_uniform(KernelFamily::Matern, train.dim())?);
//! let cv = Validation::CrossValidation { folds: 5, seed: 0 };
//! let result = select(&train, &cv, kernels, &SelectionSettings::default())?;
//! let report = sobol_report(&result.model)?;
//! for (group, s) in &report.indices {
//!     println!("S_{group} = {s:.4}");
//! }
//! # Ok(())
//! # }
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod gram;
pub mod io;
pub mod kernel;
pub mod quadrature;
pub mod select;
pub mod sensitivity;
pub mod sim;
pub mod solver;

pub use data::Dataset;
pub use error::{Error, Result};
pub use gram::{enumerate_groups, GramBundle, GramSystem, GroupIndex, JitterPolicy, OmegaBundle};
pub use io::ModelFile;
pub use kernel::{CenteredKernel, KernelFamily, KernelSet, MarginalDistribution, MarginalSpec};
pub use select::{
    Choice, GridConfig, Metamodel, PenaltyPath, Procedure, SelectionResult, SelectionSettings, TuningGrid,
    Validation, WeightMode,
};
pub use sensitivity::{SobolReport, VarianceMethod};
pub use sim::{BenchmarkConfig, BenchmarkReport, GFunction, KernelChoice};
pub use solver::{FitConfig, FitResult, PenaltyWeights, SolverState};
