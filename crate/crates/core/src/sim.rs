//! g-function simulation study: data generation, replications and performance
//! metrics.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{format_float, Dataset};
use crate::error::{Error, Result};
use crate::gram::{enumerate_groups, GroupIndex};
use crate::kernel::{KernelFamily, KernelSet};
use crate::select::{pick_min_pe, PenaltyPath, Procedure, SelectionResult, SelectionSettings, Validation};
use crate::sensitivity::sobol_report;

/// Threshold separating influential from negligible groups in selection rates.
pub const RHO: f64 = 1e-4;

/// `m(x) = prod_a (|4 x_a - 2| + c_a) / (1 + c_a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GFunction {
    c: Vec<f64>,
}

impl GFunction {
    pub fn new(c: Vec<f64>) -> Result<Self> {
        if c.is_empty() {
            return Err(Error::argument("g-function needs at least one coefficient"));
        }
        if c.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::argument("g-function coefficients must be positive"));
        }
        Ok(GFunction { c })
    }

    /// `c = (0.2, 0.6, 0.8, 100, 100)`.
    pub fn standard() -> Self {
        GFunction {
            c: vec![0.2, 0.6, 0.8, 100.0, 100.0],
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.c
    }

    pub fn dim(&self) -> usize {
        self.c.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        g_function(x, &self.c)
    }

    pub fn eval_rows(&self, x: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.nrows(),
            (0..x.nrows()).map(|i| self.eval(&x.row(i).iter().copied().collect::<Vec<_>>())),
        )
    }

    pub fn analytic_sobol(&self) -> BTreeMap<GroupIndex, f64> {
        analytic_sobol(&self.c).expect("coefficients validated at construction")
    }
}

pub fn g_function(x: &[f64], c: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(xa, ca)| ((4.0 * xa - 2.0).abs() + ca) / (1.0 + ca))
        .product()
}

/// Exact Sobol indices of the g-function for every nonempty subset of inputs:
/// `D_v = prod_{a in v} (1/3) / (1 + c_a)^2`, `D = prod_a (1 + D_a) - 1`.
pub fn analytic_sobol(c: &[f64]) -> Result<BTreeMap<GroupIndex, f64>> {
    GFunction::new(c.to_vec())?;
    let d = c.len();
    if d > 20 {
        return Err(Error::argument("analytic indices enumerate 2^d subsets; d must be at most 20"));
    }
    let partial: Vec<f64> = c.iter().map(|ca| 1.0 / (3.0 * (1.0 + ca).powi(2))).collect();
    // prod (1 + D_a) - 1 without cancellation when every D_a is small
    let total = partial.iter().map(|p| p.ln_1p()).sum::<f64>().exp_m1();
    let mut out = BTreeMap::new();
    for g in enumerate_groups(d, d)? {
        let dv: f64 = g.members().iter().map(|&a| partial[a]).product();
        out.insert(g, dv / total);
    }
    Ok(out)
}

/// Random Latin hypercube: column `a` holds `(pi_a(i) + U_i) / n` for an
/// independent permutation `pi_a`.
pub fn lhs_with_rng<R: Rng + ?Sized>(n: usize, d: usize, rng: &mut R) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(n, d);
    let mut perm: Vec<usize> = (0..n).collect();
    for a in 0..d {
        perm.shuffle(rng);
        for (i, &p) in perm.iter().enumerate() {
            x[(i, a)] = (p as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    x
}

pub fn lhs_sample(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
    lhs_with_rng(n, d, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// `n` LHS inputs and responses `m(X) + sigma * eps`.
pub fn simulate<R: Rng + ?Sized>(spec: &GFunction, n: usize, sigma: f64, rng: &mut R) -> Dataset {
    let x = lhs_with_rng(n, spec.dim(), rng);
    let m = spec.eval_rows(&x);
    let y = DVector::from_iterator(n, m.iter().map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal)));
    Dataset { y, x }
}

/// `1 - sum (y - pred)^2 / sum (y - mean(y))^2`.
pub fn r_squared(y: &DVector<f64>, pred: &DVector<f64>) -> f64 {
    let mean = y.mean();
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    1.0 - (y - pred).norm_squared() / ss_tot
}

/// `||m - f||_n^2`.
pub fn empirical_risk(truth: &DVector<f64>, pred: &DVector<f64>) -> f64 {
    (truth - pred).norm_squared() / truth.len() as f64
}

/// `sum_v (S_hat_v - S_v)^2` over the groups of `truth`; groups missing from
/// `estimated` count as 0.
pub fn global_error(estimated: &BTreeMap<GroupIndex, f64>, truth: &BTreeMap<GroupIndex, f64>) -> f64 {
    truth
        .iter()
        .map(|(g, s)| {
            let e = estimated.get(g).copied().unwrap_or(0.0);
            (e - s) * (e - s)
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelChoice {
    Brownian,
    Matern,
    Gaussian,
    /// Per replication and procedure, the kernel with the smallest prediction error.
    Mixed,
}

impl KernelChoice {
    pub fn families(self) -> Vec<KernelFamily> {
        match self {
            KernelChoice::Brownian => vec![KernelFamily::Brownian],
            KernelChoice::Matern => vec![KernelFamily::Matern],
            KernelChoice::Gaussian => vec![KernelFamily::Gaussian],
            KernelChoice::Mixed => KernelFamily::ALL.to_vec(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelChoice::Brownian => "brownian",
            KernelChoice::Matern => "matern",
            KernelChoice::Gaussian => "gaussian",
            KernelChoice::Mixed => "mixed",
        }
    }
}

impl fmt::Display for KernelChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mixed" => Ok(KernelChoice::Mixed),
            other => match other.parse::<KernelFamily>()? {
                KernelFamily::Brownian => Ok(KernelChoice::Brownian),
                KernelFamily::Matern => Ok(KernelChoice::Matern),
                KernelFamily::Gaussian => Ok(KernelChoice::Gaussian),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub n: usize,
    pub sigma: f64,
    pub kernel: KernelChoice,
    pub procedures: Vec<Procedure>,
    pub settings: SelectionSettings,
    pub seed: u64,
    pub replications: usize,
}

impl BenchmarkConfig {
    pub fn new(n: usize, sigma: f64, kernel: KernelChoice, seed: u64, replications: usize) -> Self {
        BenchmarkConfig {
            n,
            sigma,
            kernel,
            procedures: vec![Procedure::Gs, Procedure::Rdg],
            settings: SelectionSettings::default(),
            seed,
            replications,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::argument("n must be at least 2"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::argument("sigma must be finite and nonnegative"));
        }
        if self.replications == 0 {
            return Err(Error::argument("replications must be at least 1"));
        }
        if self.procedures.is_empty() {
            return Err(Error::argument("at least one procedure is required"));
        }
        Ok(())
    }
}

/// Outcome of one procedure on one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub seed: u64,
    pub procedure: Procedure,
    /// Kernel of the selected model.
    pub kernel: KernelFamily,
    pub r2: f64,
    pub er: f64,
    pub ge: f64,
    /// Estimated Sobol index of every candidate group (0 outside the support).
    pub indices: BTreeMap<GroupIndex, f64>,
    pub support: Vec<GroupIndex>,
    pub warnings: Vec<String>,
}

/// A replication that could not be completed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationFailure {
    pub rep: usize,
    pub seed: u64,
    pub procedure: Option<Procedure>,
    pub message: String,
}

/// Simulated learning, testing and performance sets of one replication.
#[derive(Debug, Clone)]
pub struct Triple {
    pub train: Dataset,
    pub test: Dataset,
    pub perf: Dataset,
}

impl Triple {
    pub fn simulate(spec: &GFunction, n: usize, sigma: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let train = simulate(spec, n, sigma, &mut rng);
        let test = simulate(spec, n, sigma, &mut rng);
        let perf = simulate(spec, n, sigma, &mut rng);
        Triple { train, test, perf }
    }
}

/// R^2 on the performance set, ER on the training design and the estimated
/// indices of a selected model.
pub fn score_selection(
    spec: &GFunction,
    truth: &BTreeMap<GroupIndex, f64>,
    candidates: &[GroupIndex],
    data: &Triple,
    selection: &SelectionResult,
    rep: usize,
    seed: u64,
) -> Result<ReplicationRecord> {
    let model = &selection.model;
    let r2 = r_squared(&data.perf.y, &model.predict(&data.perf.x)?);
    let er = empirical_risk(&spec.eval_rows(&data.train.x), &model.predict(&data.train.x)?);
    let mut indices: BTreeMap<GroupIndex, f64> = candidates.iter().map(|g| (g.clone(), 0.0)).collect();
    let mut warnings = selection.warnings.clone();
    match sobol_report(model) {
        Ok(report) => indices.extend(report.indices),
        Err(Error::Degenerate(msg)) => warnings.push(msg),
        Err(e) => return Err(e),
    }
    let ge = global_error(&indices, truth);
    Ok(ReplicationRecord {
        rep,
        seed,
        procedure: selection.procedure,
        kernel: selection.kernel,
        r2,
        er,
        ge,
        indices,
        support: model.support().into_iter().collect(),
        warnings,
    })
}

/// Simulates one replication and runs every configured procedure on it.
pub fn run_replication(
    spec: &GFunction,
    config: &BenchmarkConfig,
    rep: usize,
    seed: u64,
) -> Vec<std::result::Result<ReplicationRecord, ReplicationFailure>> {
    let fail = |procedure: Option<Procedure>, e: Error| ReplicationFailure {
        rep,
        seed,
        procedure,
        message: e.to_string(),
    };
    let data = Triple::simulate(spec, config.n, config.sigma, seed);
    let truth = spec.analytic_sobol();
    let candidates = match config.settings.groups(spec.dim()) {
        Ok(c) => c,
        Err(e) => return vec![Err(fail(None, e))],
    };
    let paths = config
        .kernel
        .families()
        .into_iter()
        .map(|f| {
            let ks = Arc::new(KernelSet::unit_uniform(f, spec.dim())?);
            PenaltyPath::fit(&data.train, ks, &config.settings)
        })
        .collect::<Result<Vec<_>>>();
    let paths = match paths {
        Ok(p) => p,
        Err(e) => return vec![Err(fail(None, e))],
    };
    let validation = Validation::TestSet(data.test.clone());
    config
        .procedures
        .iter()
        .map(|&proc| {
            let results = paths
                .iter()
                .map(|p| p.select(&validation, proc))
                .collect::<Result<Vec<_>>>()
                .and_then(pick_min_pe)
                .and_then(|sel| score_selection(spec, &truth, &candidates, &data, &sel, rep, seed));
            results.map_err(|e| fail(Some(proc), e))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Standard deviation across replications (denominator `r - 1`; 0 for one replication).
    pub sd: f64,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Self {
        let r = values.len();
        if r == 0 {
            return MeanSd { mean: f64::NAN, sd: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / r as f64;
        let sd = if r > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r - 1) as f64).sqrt()
        } else {
            0.0
        };
        MeanSd { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcedureSummary {
    pub procedure: Procedure,
    pub completed: usize,
    pub failed: usize,
    pub r2: MeanSd,
    pub er: MeanSd,
    pub ge: MeanSd,
    pub indices: BTreeMap<GroupIndex, MeanSd>,
    /// Percentage of replications with the group in the support.
    pub psel: BTreeMap<GroupIndex, f64>,
    /// `psel` averaged over candidate groups with true index above `RHO`.
    pub psel_above: f64,
    /// `psel` averaged over candidate groups with true index at most `RHO`.
    pub psel_below: f64,
    /// How often each kernel was selected.
    pub kernel_counts: BTreeMap<KernelFamily, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchmarkReport {
    pub function: GFunction,
    pub n: usize,
    pub sigma: f64,
    pub kernel: KernelChoice,
    pub dmax: usize,
    pub seed: u64,
    pub replications: usize,
    pub rho: f64,
    pub true_indices: BTreeMap<GroupIndex, f64>,
    pub summaries: Vec<ProcedureSummary>,
    pub records: Vec<ReplicationRecord>,
    pub failures: Vec<ReplicationFailure>,
}

/// Per-replication seeds drawn from a master stream.
pub fn replication_seeds(master: u64, replications: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..replications).map(|_| rng.next_u64()).collect()
}

fn summarize(
    procedure: Procedure,
    records: &[&ReplicationRecord],
    failed: usize,
    candidates: &[GroupIndex],
    truth: &BTreeMap<GroupIndex, f64>,
) -> ProcedureSummary {
    let collect = |f: &dyn Fn(&ReplicationRecord) -> f64| records.iter().map(|r| f(r)).collect::<Vec<_>>();
    let r = records.len() as f64;
    let indices = candidates
        .iter()
        .map(|g| (g.clone(), MeanSd::of(&collect(&|rec| rec.indices[g]))))
        .collect();
    let psel: BTreeMap<GroupIndex, f64> = candidates
        .iter()
        .map(|g| {
            let hits = records.iter().filter(|rec| rec.support.contains(g)).count();
            (g.clone(), if r > 0.0 { 100.0 * hits as f64 / r } else { f64::NAN })
        })
        .collect();
    let average = |above: bool| {
        let sel: Vec<f64> = candidates
            .iter()
            .filter(|g| (truth[*g] > RHO) == above)
            .map(|g| psel[g])
            .collect();
        if sel.is_empty() {
            f64::NAN
        } else {
            sel.iter().sum::<f64>() / sel.len() as f64
        }
    };
    let mut kernel_counts = BTreeMap::new();
    for rec in records {
        *kernel_counts.entry(rec.kernel).or_insert(0) += 1;
    }
    ProcedureSummary {
        procedure,
        completed: records.len(),
        failed,
        r2: MeanSd::of(&collect(&|rec| rec.r2)),
        er: MeanSd::of(&collect(&|rec| rec.er)),
        ge: MeanSd::of(&collect(&|rec| rec.ge)),
        indices,
        psel_above: average(true),
        psel_below: average(false),
        psel,
        kernel_counts,
    }
}

/// Runs all replications (in parallel) and aggregates them.
pub fn run_benchmark(spec: &GFunction, config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let candidates = config.settings.groups(spec.dim())?;
    let truth = spec.analytic_sobol();
    let seeds = replication_seeds(config.seed, config.replications);
    let outcomes: Vec<_> = seeds
        .par_iter()
        .enumerate()
        .map(|(rep, &seed)| run_replication(spec, config, rep, seed))
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for outcome in outcomes.into_iter().flatten() {
        match outcome {
            Ok(r) => records.push(r),
            Err(f) => failures.push(f),
        }
    }
    let summaries = config
        .procedures
        .iter()
        .map(|&p| {
            let recs: Vec<&ReplicationRecord> = records.iter().filter(|r| r.procedure == p).collect();
            let failed = failures
                .iter()
                .filter(|f| f.procedure.is_none() || f.procedure == Some(p))
                .count();
            summarize(p, &recs, failed, &candidates, &truth)
        })
        .collect();
    Ok(BenchmarkReport {
        function: spec.clone(),
        n: config.n,
        sigma: config.sigma,
        kernel: config.kernel,
        dmax: candidates.iter().map(GroupIndex::len).max().unwrap_or(0),
        seed: config.seed,
        replications: config.replications,
        rho: RHO,
        true_indices: truth,
        summaries,
        records,
        failures,
    })
}

impl BenchmarkReport {
    pub fn summary(&self, procedure: Procedure) -> Option<&ProcedureSummary> {
        self.summaries.iter().find(|s| s.procedure == procedure)
    }

    /// One row per completed record: `rep,procedure,kernel,R2,ER,GE` followed by
    /// one column per candidate group.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let groups: Vec<GroupIndex> = self
            .summaries
            .first()
            .map(|s| s.indices.keys().cloned().collect())
            .unwrap_or_default();
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = ["rep", "procedure", "kernel", "R2", "ER", "GE"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend(groups.iter().map(|g| g.to_string()));
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.rep.to_string(),
                r.procedure.to_string(),
                r.kernel.to_string(),
                format_float(r.r2),
                format_float(r.er),
                format_float(r.ge),
            ];
            row.extend(groups.iter().map(|g| format_float(r.indices.get(g).copied().unwrap_or(0.0))));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
