//! Tuning-parameter selection: the `(mu, gamma)` grid, the group-sparse (GS)
//! and ridge-refit (rdg) procedures, cross-validation and kernel choice.

mod cv;
mod metamodel;
mod ridge;

use std::collections::BTreeSet;
use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cv::{cross_validate, fold_partition};
pub use metamodel::{group_cross_grams, prediction_error, Metamodel};
pub use ridge::{lambda_grid, ridge_refit, ridge_solve, support_gram, RidgeSolution};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gram::{enumerate_groups, estimate_nu, GramBundle, GramSystem, GroupIndex, JitterPolicy};
use crate::kernel::{KernelFamily, KernelSet};
use crate::solver::{fit, FitConfig, PenaltyWeights, SolverState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Procedure {
    /// Keep the group-sparse fit with the smallest prediction error.
    Gs,
    /// Refit by kernel ridge regression on each selected support.
    Rdg,
}

impl Procedure {
    pub fn name(self) -> &'static str {
        match self {
            Procedure::Gs => "gs",
            Procedure::Rdg => "rdg",
        }
    }
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gs" => Ok(Procedure::Gs),
            "rdg" => Ok(Procedure::Rdg),
            _ => Err(Error::argument(format!("unknown procedure `{s}` (expected gs or rdg)"))),
        }
    }
}

/// How the per-group penalty weights `(omega_v, zeta_v)` are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMode {
    /// `omega_v = zeta_v = 1`.
    Unit,
    /// `omega_v = nu_v^2`, `zeta_v = nu_v` from the Gram spectrum.
    Nu,
    /// `omega_v = zeta_v = c^(|v| - 1)`.
    Order(f64),
}

impl WeightMode {
    pub fn name(self) -> &'static str {
        match self {
            WeightMode::Unit => "unit",
            WeightMode::Nu => "nu",
            WeightMode::Order(_) => "order",
        }
    }
}

/// Penalty weights for each bundle of `sys`.
pub fn group_weights(mode: WeightMode, sys: &GramSystem) -> Result<(Vec<f64>, Vec<f64>)> {
    match mode {
        WeightMode::Unit => Ok((vec![1.0; sys.len()], vec![1.0; sys.len()])),
        WeightMode::Nu => {
            let nu = sys
                .bundles()
                .iter()
                .map(|b| {
                    let nu = estimate_nu(b, 1.0)?;
                    if nu > 0.0 {
                        Ok(nu)
                    } else {
                        Err(Error::Degenerate(format!("estimated rate of group {} is zero", b.group)))
                    }
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((nu.iter().map(|v| v * v).collect(), nu))
        }
        WeightMode::Order(c) => {
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::argument("order weight base must be positive"));
            }
            let w: Vec<f64> = sys.groups().map(|g| c.powi(g.len() as i32 - 1)).collect();
            Ok((w.clone(), w))
        }
    }
}

/// Smallest `mu` for which all blocks vanish at `gamma = 0`:
/// `max_v 2 ||K_v^{1/2} (Y - mean(Y))|| / omega_v`.
pub fn compute_mu_max(y: &DVector<f64>, grams: &[GramBundle], omega: &[f64]) -> Result<f64> {
    if omega.len() != grams.len() {
        return Err(Error::argument("one weight per group is required"));
    }
    if omega.iter().any(|w| !(*w > 0.0)) {
        return Err(Error::argument("weights must be positive"));
    }
    let f0 = y.sum() / y.len() as f64;
    let r = y.add_scalar(-f0);
    let mut best: f64 = 0.0;
    for (b, w) in grams.iter().zip(omega) {
        if b.n() != y.len() {
            return Err(Error::argument("response length does not match Gram matrices"));
        }
        let c = b.to_eigen(&r);
        let half = c
            .iter()
            .zip(b.eigenvalues.iter())
            .map(|(ck, lk)| lk * ck * ck)
            .sum::<f64>()
            .sqrt();
        best = best.max(2.0 * half / w);
    }
    // a few ulps of headroom so that mu_max * omega_v reproduces the bound
    Ok(best * (1.0 + 8.0 * f64::EPSILON))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    /// `mu_l = mu_max 2^-l` for `l = 1..=lmax`.
    pub lmax: usize,
    /// `gamma` values as multiples of `mu_max / sqrt(n)`.
    pub gamma_factors: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            lmax: 8,
            gamma_factors: vec![0.0, 1.0, 0.25, 0.0625, 0.015625],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningGrid {
    /// Candidate groups, aligned with `omega` and `zeta`.
    pub groups: Vec<GroupIndex>,
    pub mu_max: f64,
    /// Strictly decreasing, positive.
    pub mu_values: Vec<f64>,
    pub gamma_values: Vec<f64>,
    pub omega: Vec<f64>,
    pub zeta: Vec<f64>,
}

impl TuningGrid {
    pub fn new(
        groups: Vec<GroupIndex>,
        mu_max: f64,
        mu_values: Vec<f64>,
        gamma_values: Vec<f64>,
        omega: Vec<f64>,
        zeta: Vec<f64>,
    ) -> Result<Self> {
        if mu_values.is_empty() || gamma_values.is_empty() {
            return Err(Error::argument("tuning grid must be nonempty"));
        }
        if mu_values.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::argument("mu values must be positive"));
        }
        if mu_values.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::argument("mu values must be strictly decreasing"));
        }
        if gamma_values.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::argument("gamma values must be nonnegative"));
        }
        if omega.len() != groups.len() || zeta.len() != groups.len() || omega.iter().chain(&zeta).any(|w| !(*w > 0.0)) {
            return Err(Error::argument("weights must be positive, one pair per group"));
        }
        let mut seen = Vec::new();
        for g in gamma_values {
            if !seen.contains(&g) {
                seen.push(g);
            }
        }
        Ok(TuningGrid {
            groups,
            mu_max,
            mu_values,
            gamma_values: seen,
            omega,
            zeta,
        })
    }

    pub fn build(y: &DVector<f64>, sys: &GramSystem, omega: Vec<f64>, zeta: Vec<f64>, config: &GridConfig) -> Result<Self> {
        if config.lmax == 0 {
            return Err(Error::argument("lmax must be at least 1"));
        }
        let mu_max = compute_mu_max(y, sys.bundles(), &omega)?;
        if !(mu_max > 0.0) {
            return Err(Error::Degenerate("response is constant: every fit is intercept-only".into()));
        }
        let mu = (1..=config.lmax).map(|l| mu_max * 0.5f64.powi(l as i32)).collect();
        let gamma0 = mu_max / (y.len() as f64).sqrt();
        let gamma = config.gamma_factors.iter().map(|f| f * gamma0).collect();
        Self::new(sys.groups().cloned().collect(), mu_max, mu, gamma, omega, zeta)
    }

    /// `mu'_v = mu omega_v`, `gamma'_v = gamma zeta_v`.
    pub fn penalties(&self, mu: f64, gamma: f64) -> PenaltyWeights {
        PenaltyWeights {
            mu: self.omega.iter().map(|w| mu * w).collect(),
            gamma: self.zeta.iter().map(|w| gamma * w).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.mu_values.len() * self.gamma_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionSettings {
    pub procedure: Procedure,
    /// Largest interaction order; `None` means `min(3, d)`.
    pub dmax: Option<usize>,
    pub weights: WeightMode,
    pub grid: GridConfig,
    pub lambda_count: usize,
    /// Range of `lambda / (trace(Kbar) / n)`.
    pub lambda_range: (f64, f64),
    pub fit: FitConfig,
    pub jitter: JitterPolicy,
}

impl Default for SelectionSettings {
    fn default() -> Self {
        SelectionSettings {
            procedure: Procedure::Rdg,
            dmax: None,
            weights: WeightMode::Unit,
            grid: GridConfig::default(),
            lambda_count: 10,
            lambda_range: (1e-6, 1.0),
            fit: FitConfig::default(),
            jitter: JitterPolicy::default(),
        }
    }
}

impl SelectionSettings {
    pub fn groups(&self, d: usize) -> Result<Vec<GroupIndex>> {
        enumerate_groups(d, self.dmax.unwrap_or(3.min(d)))
    }
}

/// Where prediction errors come from.
#[derive(Debug, Clone)]
pub enum Validation {
    TestSet(Dataset),
    CrossValidation { folds: usize, seed: u64 },
}

#[derive(Debug, Clone)]
pub struct PathPoint {
    pub mu: f64,
    pub gamma: f64,
    pub fit: std::result::Result<SolverState, String>,
    pub converged: bool,
}

impl PathPoint {
    pub fn support(&self) -> Vec<GroupIndex> {
        self.fit
            .as_ref()
            .map(|s| s.theta.keys().cloned().collect())
            .unwrap_or_default()
    }
}

/// Fits for every grid point: one warm-started descending-`mu` path per `gamma`.
fn run_path(y: &DVector<f64>, sys: &GramSystem, grid: &TuningGrid, config: &FitConfig) -> Vec<PathPoint> {
    grid.gamma_values
        .par_iter()
        .map(|&gamma| {
            let mut warm: Option<SolverState> = None;
            grid.mu_values
                .iter()
                .map(|&mu| {
                    let pen = grid.penalties(mu, gamma);
                    match fit(y, sys.bundles(), &pen, config, warm.as_ref()) {
                        Ok(res) => {
                            warm = Some(res.state.clone());
                            PathPoint {
                                mu,
                                gamma,
                                fit: Ok(res.state),
                                converged: res.converged,
                            }
                        }
                        Err(e) => PathPoint {
                            mu,
                            gamma,
                            fit: Err(e.to_string()),
                            converged: false,
                        },
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Held-out data with its cross-Gram matrices against a training design,
/// aligned with the bundles of the training system.
struct HeldOut {
    y: DVector<f64>,
    cross: Vec<DMatrix<f64>>,
    groups: Vec<GroupIndex>,
}

impl HeldOut {
    fn new(kernels: &KernelSet, train_x: &DMatrix<f64>, groups: Vec<GroupIndex>, test: &Dataset) -> Result<Self> {
        let cross = group_cross_grams(kernels, &test.x, train_x, &groups)?;
        Ok(HeldOut {
            y: test.y.clone(),
            cross,
            groups,
        })
    }

    fn pos(&self, g: &GroupIndex) -> usize {
        self.groups.iter().position(|h| h == g).expect("group is a candidate")
    }

    fn pe(&self, pred: DVector<f64>) -> f64 {
        (&self.y - pred).norm_squared() / self.y.len() as f64
    }

    fn pe_state(&self, state: &SolverState) -> f64 {
        let mut pred = DVector::from_element(self.y.len(), state.f0);
        for (g, theta) in &state.theta {
            pred += &self.cross[self.pos(g)] * theta;
        }
        self.pe(pred)
    }

    fn pe_ridge(&self, support: &[GroupIndex], sol: &RidgeSolution) -> f64 {
        let mut cbar = DMatrix::zeros(self.y.len(), sol.alpha.len());
        for g in support {
            cbar += &self.cross[self.pos(g)];
        }
        self.pe((cbar * &sol.alpha).add_scalar(sol.f0))
    }
}

fn constant_pe(y: &DVector<f64>, f0: f64) -> f64 {
    y.iter().map(|v| (v - f0) * (v - f0)).sum::<f64>() / y.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeEntry {
    pub mu: f64,
    pub gamma: f64,
    /// `None` when the fit failed.
    pub pe: Option<f64>,
    pub support: Vec<GroupIndex>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RidgeEntry {
    pub support: Vec<GroupIndex>,
    pub lambda: f64,
    pub pe: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Choice {
    Penalty { mu: f64, gamma: f64 },
    Ridge { lambda: f64, support: Vec<GroupIndex> },
    InterceptOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelScore {
    pub kernel: KernelFamily,
    pub pe: f64,
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    pub procedure: Procedure,
    pub kernel: KernelFamily,
    pub grid: TuningGrid,
    pub pe_surface: Vec<PeEntry>,
    pub ridge_table: Vec<RidgeEntry>,
    pub chosen: Choice,
    pub chosen_pe: f64,
    pub model: Metamodel,
    pub cv_seed: Option<u64>,
    pub warnings: Vec<String>,
    /// Selected prediction error per kernel when several kernels competed.
    pub kernel_scores: Vec<KernelScore>,
}

/// The regularization path over a tuning grid on one training set.
#[derive(Debug, Clone)]
pub struct PenaltyPath {
    pub grid: TuningGrid,
    pub points: Vec<PathPoint>,
    sys: GramSystem,
    train: Dataset,
    kernels: Arc<KernelSet>,
    training_x: Arc<DMatrix<f64>>,
    settings: SelectionSettings,
}

impl PenaltyPath {
    pub fn fit(train: &Dataset, kernels: Arc<KernelSet>, settings: &SelectionSettings) -> Result<Self> {
        if train.dim() != kernels.dim() {
            return Err(Error::argument(format!(
                "data has {} inputs but the kernel set has {}",
                train.dim(),
                kernels.dim()
            )));
        }
        let groups = settings.groups(train.dim())?;
        let sys = GramSystem::build(&train.x, &kernels, &groups, settings.jitter)?;
        let (omega, zeta) = group_weights(settings.weights, &sys)?;
        let grid = TuningGrid::build(&train.y, &sys, omega, zeta, &settings.grid)?;
        let points = run_path(&train.y, &sys, &grid, &settings.fit);
        Ok(PenaltyPath {
            grid,
            points,
            sys,
            train: train.clone(),
            training_x: Arc::new(train.x.clone()),
            kernels,
            settings: settings.clone(),
        })
    }

    pub fn grams(&self) -> &GramSystem {
        &self.sys
    }

    pub fn kernels(&self) -> &Arc<KernelSet> {
        &self.kernels
    }

    pub fn groups(&self) -> Vec<GroupIndex> {
        self.sys.groups().cloned().collect()
    }

    /// Distinct nonempty supports along the path, in sorted order.
    pub fn supports(&self) -> Vec<Vec<GroupIndex>> {
        let set: BTreeSet<Vec<GroupIndex>> = self
            .points
            .iter()
            .map(PathPoint::support)
            .filter(|s| !s.is_empty())
            .collect();
        set.into_iter().collect()
    }

    fn metamodel(&self, state: &SolverState) -> Result<Metamodel> {
        Metamodel::from_state(state, self.kernels.clone(), self.training_x.clone())
    }

    pub fn select(&self, validation: &Validation, procedure: Procedure) -> Result<SelectionResult> {
        match procedure {
            Procedure::Gs => self.select_gs(validation),
            Procedure::Rdg => self.select_rdg(validation),
        }
    }

    fn base_result(&self, procedure: Procedure, validation: &Validation, model: Metamodel) -> SelectionResult {
        SelectionResult {
            procedure,
            kernel: self.kernels.family(),
            grid: self.grid.clone(),
            pe_surface: Vec::new(),
            ridge_table: Vec::new(),
            chosen: Choice::InterceptOnly,
            chosen_pe: f64::NAN,
            model,
            cv_seed: match validation {
                Validation::CrossValidation { seed, .. } => Some(*seed),
                Validation::TestSet(_) => None,
            },
            warnings: Vec::new(),
            kernel_scores: Vec::new(),
        }
    }

    fn path_pes(&self, validation: &Validation) -> Result<Vec<Option<f64>>> {
        match validation {
            Validation::TestSet(test) => {
                let held = HeldOut::new(&self.kernels, &self.train.x, self.groups(), test)?;
                Ok(self
                    .points
                    .iter()
                    .map(|p| p.fit.as_ref().ok().map(|s| held.pe_state(s)))
                    .collect())
            }
            Validation::CrossValidation { folds, seed } => {
                let groups = self.groups();
                cross_validate(&self.train, *folds, *seed, |tr, te| {
                    let sys = GramSystem::build(&tr.x, &self.kernels, &groups, self.settings.jitter)?;
                    let pts = run_path(&tr.y, &sys, &self.grid, &self.settings.fit);
                    let held = HeldOut::new(&self.kernels, &tr.x, groups.clone(), te)?;
                    Ok(pts
                        .iter()
                        .map(|p| p.fit.as_ref().ok().map(|s| held.pe_state(s)))
                        .collect())
                })
            }
        }
    }

    fn select_gs(&self, validation: &Validation) -> Result<SelectionResult> {
        let pes = self.path_pes(validation)?;
        let surface: Vec<PeEntry> = self
            .points
            .iter()
            .zip(&pes)
            .map(|(p, pe)| PeEntry {
                mu: p.mu,
                gamma: p.gamma,
                pe: *pe,
                support: p.support(),
                error: p.fit.as_ref().err().cloned(),
            })
            .collect();
        let best = (0..surface.len())
            .filter(|&i| surface[i].pe.is_some())
            .min_by(|&a, &b| {
                let (ea, eb) = (&surface[a], &surface[b]);
                ea.pe
                    .unwrap()
                    .total_cmp(&eb.pe.unwrap())
                    .then(eb.mu.total_cmp(&ea.mu))
                    .then(eb.gamma.total_cmp(&ea.gamma))
                    .then(a.cmp(&b))
            })
            .ok_or_else(|| {
                Error::numerical(None, "every fit on the tuning grid failed")
            })?;
        let state = self.points[best].fit.as_ref().expect("selected point succeeded");
        let mut res = self.base_result(Procedure::Gs, validation, self.metamodel(state)?);
        res.chosen = Choice::Penalty {
            mu: surface[best].mu,
            gamma: surface[best].gamma,
        };
        res.chosen_pe = surface[best].pe.unwrap();
        let failed = surface.iter().filter(|e| e.pe.is_none()).count();
        if failed > 0 {
            res.warnings.push(format!("{failed} grid points failed and were excluded"));
        }
        if self.points.iter().any(|p| p.fit.is_ok() && !p.converged) {
            res.warnings.push("some fits stopped at the sweep limit".into());
        }
        res.pe_surface = surface;
        Ok(res)
    }

    fn select_rdg(&self, validation: &Validation) -> Result<SelectionResult> {
        let supports = self.supports();
        let surface: Vec<PeEntry> = self
            .points
            .iter()
            .map(|p| PeEntry {
                mu: p.mu,
                gamma: p.gamma,
                pe: None,
                support: p.support(),
                error: p.fit.as_ref().err().cloned(),
            })
            .collect();
        if supports.is_empty() {
            let f0 = self.train.y.mean();
            let model = Metamodel::intercept_only(f0, self.kernels.clone(), self.training_x.clone())?;
            let mut res = self.base_result(Procedure::Rdg, validation, model);
            res.chosen_pe = match validation {
                Validation::TestSet(test) => constant_pe(&test.y, f0),
                Validation::CrossValidation { folds, seed } => cross_validate(&self.train, *folds, *seed, |tr, te| {
                    Ok(vec![Some(constant_pe(&te.y, tr.y.mean()))])
                })?[0]
                    .expect("constant model cannot fail"),
            };
            res.warnings.push("every fit on the grid has empty support; returning the intercept-only model".into());
            res.pe_surface = surface;
            return Ok(res);
        }

        let lambdas = supports
            .iter()
            .map(|s| {
                let kbar = support_gram(&self.sys, s)?;
                lambda_grid(&kbar, self.settings.lambda_count, self.settings.lambda_range.0, self.settings.lambda_range.1)
            })
            .collect::<Result<Vec<_>>>()?;
        let pairs: Vec<(usize, f64)> = lambdas
            .iter()
            .enumerate()
            .flat_map(|(i, ls)| ls.iter().map(move |&l| (i, l)))
            .collect();

        let ridge_pes = |sys: &GramSystem, y: &DVector<f64>, held: &HeldOut| -> Result<Vec<Option<f64>>> {
            supports
                .par_iter()
                .zip(&lambdas)
                .map(|(s, ls)| {
                    let kbar = support_gram(sys, s)?;
                    Ok(ls
                        .iter()
                        .map(|&l| ridge_solve(&kbar, y, l).ok().map(|sol| held.pe_ridge(s, &sol)))
                        .collect::<Vec<_>>())
                })
                .collect::<Result<Vec<_>>>()
                .map(|v| v.into_iter().flatten().collect())
        };
        let union: Vec<GroupIndex> = supports
            .iter()
            .flatten()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let pes = match validation {
            Validation::TestSet(test) => {
                let held = HeldOut::new(&self.kernels, &self.train.x, self.groups(), test)?;
                ridge_pes(&self.sys, &self.train.y, &held)?
            }
            Validation::CrossValidation { folds, seed } => cross_validate(&self.train, *folds, *seed, |tr, te| {
                let sys = GramSystem::build(&tr.x, &self.kernels, &union, self.settings.jitter)?;
                let held = HeldOut::new(&self.kernels, &tr.x, union.clone(), te)?;
                ridge_pes(&sys, &tr.y, &held)
            })?,
        };

        let table: Vec<RidgeEntry> = pairs
            .iter()
            .zip(&pes)
            .map(|(&(i, l), pe)| RidgeEntry {
                support: supports[i].clone(),
                lambda: l,
                pe: *pe,
            })
            .collect();

        // best lambda per support (ties toward larger lambda), then best support
        // (ties toward fewer groups, then sorted order)
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, s) in supports.iter().enumerate() {
            let local = table
                .iter()
                .filter(|e| &e.support == s && e.pe.is_some())
                .min_by(|a, b| a.pe.unwrap().total_cmp(&b.pe.unwrap()).then(b.lambda.total_cmp(&a.lambda)));
            let Some(e) = local else { continue };
            let candidate = (i, e.lambda, e.pe.unwrap());
            best = match best {
                None => Some(candidate),
                Some(cur) => {
                    let ord = candidate
                        .2
                        .total_cmp(&cur.2)
                        .then(supports[candidate.0].len().cmp(&supports[cur.0].len()))
                        .then(supports[candidate.0].cmp(&supports[cur.0]));
                    Some(if ord == Ordering::Less { candidate } else { cur })
                }
            };
        }
        let (si, lambda, pe) = best.ok_or_else(|| Error::numerical(None, "every ridge refit failed"))?;
        let model = ridge_refit(
            &self.train.y,
            &self.sys,
            &supports[si],
            lambda,
            self.kernels.clone(),
            self.training_x.clone(),
        )?;
        let mut res = self.base_result(Procedure::Rdg, validation, model);
        res.chosen = Choice::Ridge {
            lambda,
            support: supports[si].clone(),
        };
        res.chosen_pe = pe;
        // each grid point reports the best refit PE of its support
        res.pe_surface = surface
            .into_iter()
            .map(|mut e| {
                e.pe = table
                    .iter()
                    .filter(|r| r.support == e.support)
                    .filter_map(|r| r.pe)
                    .min_by(f64::total_cmp);
                e
            })
            .collect();
        res.ridge_table = table;
        Ok(res)
    }
}

/// Fits the path on `train` and selects with `settings.procedure`.
pub fn select(
    train: &Dataset,
    validation: &Validation,
    kernels: Arc<KernelSet>,
    settings: &SelectionSettings,
) -> Result<SelectionResult> {
    PenaltyPath::fit(train, kernels, settings)?.select(validation, settings.procedure)
}

/// Group-sparse procedure with a test set.
pub fn proc_gs(train: &Dataset, test: &Dataset, kernels: Arc<KernelSet>, settings: &SelectionSettings) -> Result<SelectionResult> {
    PenaltyPath::fit(train, kernels, settings)?.select(&Validation::TestSet(test.clone()), Procedure::Gs)
}

/// Ridge procedure with a test set.
pub fn proc_rdg(train: &Dataset, test: &Dataset, kernels: Arc<KernelSet>, settings: &SelectionSettings) -> Result<SelectionResult> {
    PenaltyPath::fit(train, kernels, settings)?.select(&Validation::TestSet(test.clone()), Procedure::Rdg)
}

/// Keeps the result with the smallest selected prediction error (first on ties)
/// and records every candidate's score.
pub fn pick_min_pe(results: Vec<SelectionResult>) -> Result<SelectionResult> {
    let scores: Vec<KernelScore> = results
        .iter()
        .map(|r| KernelScore {
            kernel: r.kernel,
            pe: r.chosen_pe,
        })
        .collect();
    let best = (0..results.len())
        .min_by(|&a, &b| results[a].chosen_pe.total_cmp(&results[b].chosen_pe).then(a.cmp(&b)))
        .ok_or_else(|| Error::argument("no candidate results"))?;
    let mut out = results.into_iter().nth(best).expect("index in range");
    out.kernel_scores = scores;
    Ok(out)
}

/// Runs the selected procedure for each kernel set and keeps the one with the
/// smallest prediction error.
pub fn choose_kernel_mixed(
    train: &Dataset,
    validation: &Validation,
    kernel_sets: &[Arc<KernelSet>],
    settings: &SelectionSettings,
) -> Result<SelectionResult> {
    if kernel_sets.len() < 2 {
        return Err(Error::argument("kernel choice needs at least two kernels"));
    }
    let results = kernel_sets
        .iter()
        .map(|k| select(train, validation, k.clone(), settings))
        .collect::<Result<Vec<_>>>()?;
    pick_min_pe(results)
}
