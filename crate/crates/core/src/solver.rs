//! Block coordinate descent for the ridge-group-sparse criterion
//!
//! ```text
//! C'(f0, theta) = ||Y - f0 1 - sum_v K_v theta_v||^2
//!               + sum_v gamma'_v ||K_v theta_v|| + sum_v mu'_v ||K_v^{1/2} theta_v||
//! ```
//!
//! Each block is handled in the eigenbasis of its Gram matrix: with
//! `K = U diag(l) U^T`, `c = U^T R` and `t = U^T theta`, the block criterion is
//! `||c - l t||^2 + gamma' ||l t|| + mu' sqrt(sum l t^2)`, so every operation on a
//! block after the two basis changes costs `O(n)`.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gram::{GramBundle, GroupIndex};

/// Per-group penalty levels `mu'_v` (RKHS norm) and `gamma'_v` (empirical norm),
/// aligned with the order of the Gram bundles they are used with.
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyWeights {
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
}

impl PenaltyWeights {
    pub fn new(mu: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if mu.len() != gamma.len() {
            return Err(Error::argument("mu' and gamma' must have one entry per group"));
        }
        if mu.iter().chain(&gamma).any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::argument("penalties must be finite and nonnegative"));
        }
        Ok(PenaltyWeights { mu, gamma })
    }

    /// The same `(mu', gamma')` for each of `groups` groups.
    pub fn constant(groups: usize, mu: f64, gamma: f64) -> Result<Self> {
        Self::new(vec![mu; groups], vec![gamma; groups])
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn scaled(&self, c: f64) -> Self {
        PenaltyWeights {
            mu: self.mu.iter().map(|m| m * c).collect(),
            gamma: self.gamma.iter().map(|g| g * c).collect(),
        }
    }
}

/// Intercept and nonzero coefficient blocks. A group absent from `theta` has
/// `theta_v = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub f0: f64,
    pub theta: BTreeMap<GroupIndex, DVector<f64>>,
}

impl SolverState {
    pub fn intercept_only(f0: f64) -> Self {
        SolverState {
            f0,
            theta: BTreeMap::new(),
        }
    }

    pub fn support(&self) -> BTreeSet<GroupIndex> {
        self.theta.keys().cloned().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    /// Stop once the largest relative block change of a sweep is below this.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Fixed-point tolerance of the nonzero block solver.
    pub block_tol: f64,
    pub block_max_iter: usize,
    /// Permit `mu'_v = 0` for every group (the blocks are then not identifiable).
    pub allow_zero_ridge: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            tol: 1e-4,
            max_sweeps: 1000,
            block_tol: 1e-10,
            block_max_iter: 2000,
            allow_zero_ridge: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub state: SolverState,
    /// Criterion value at the start and after every sweep.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    pub final_step_norm: f64,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }
}

/// Threshold under which a block is treated as exactly zero.
pub fn numerical_zero(n: usize) -> f64 {
    1e-12 * n as f64
}

fn check_dims(y: &DVector<f64>, grams: &[GramBundle]) -> Result<usize> {
    let n = y.len();
    if grams.iter().any(|b| b.n() != n) {
        return Err(Error::argument("response length does not match Gram matrices"));
    }
    Ok(n)
}

fn fitted(state: &SolverState, grams: &[GramBundle], n: usize, skip: Option<&GroupIndex>) -> Result<DVector<f64>> {
    let mut f = DVector::zeros(n);
    for (g, theta) in &state.theta {
        if Some(g) == skip {
            continue;
        }
        let b = grams
            .iter()
            .find(|b| &b.group == g)
            .ok_or_else(|| Error::argument(format!("no Gram matrix for group {g}")))?;
        f += &b.k * theta;
    }
    Ok(f)
}

/// Evaluates `C'` from its definition.
pub fn objective(
    state: &SolverState,
    y: &DVector<f64>,
    grams: &[GramBundle],
    weights: &PenaltyWeights,
) -> Result<f64> {
    let n = check_dims(y, grams)?;
    if weights.len() != grams.len() {
        return Err(Error::argument("one penalty pair per group is required"));
    }
    let resid = y - fitted(state, grams, n, None)?.add_scalar(state.f0);
    let mut total = resid.norm_squared();
    for (i, b) in grams.iter().enumerate() {
        if let Some(theta) = state.theta.get(&b.group) {
            total += weights.gamma[i] * (&b.k * theta).norm();
            total += weights.mu[i] * (&b.sqrt * theta).norm();
        }
    }
    Ok(total)
}

/// Exact minimizer of `C'` in `f0` for fixed blocks: `mean(Y) - sum_v mean(K_v theta_v)`.
pub fn update_intercept(y: &DVector<f64>, state: &SolverState, grams: &[GramBundle]) -> Result<f64> {
    let n = check_dims(y, grams)?;
    let f = fitted(state, grams, n, None)?;
    Ok((y.sum() - f.sum()) / n as f64)
}

/// Partial residual `R_v = Y - f0 1 - sum_{w != v} K_w theta_w`.
pub fn residual(
    y: &DVector<f64>,
    state: &SolverState,
    grams: &[GramBundle],
    v: &GroupIndex,
) -> Result<DVector<f64>> {
    let n = check_dims(y, grams)?;
    Ok(y - fitted(state, grams, n, Some(v))?.add_scalar(state.f0))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Block criterion in eigen coordinates.
pub(crate) fn block_objective_eigen(c: &[f64], lam: &[f64], t: &[f64], mu: f64, gamma: f64) -> f64 {
    let mut fit = 0.0;
    let mut kt = 0.0;
    let mut half = 0.0;
    for ((&ck, &lk), &tk) in c.iter().zip(lam).zip(t) {
        let lt = lk * tk;
        fit += (ck - lt) * (ck - lt);
        kt += lt * lt;
        half += lk * tk * tk;
    }
    fit + gamma * kt.sqrt() + mu * half.sqrt()
}

/// Block criterion `||R - K theta||^2 + gamma' ||K theta|| + mu' ||K^{1/2} theta||`
/// evaluated from the matrices.
pub fn block_objective(r: &DVector<f64>, bundle: &GramBundle, theta: &DVector<f64>, mu: f64, gamma: f64) -> f64 {
    let kt = &bundle.k * theta;
    (r - &kt).norm_squared() + gamma * kt.norm() + mu * (&bundle.sqrt * theta).norm()
}

pub(crate) fn zero_test_eigen(c: &[f64], lam: &[f64], mu: f64, gamma: f64, group: &GroupIndex) -> Result<bool> {
    if mu == 0.0 && gamma == 0.0 {
        return Err(Error::argument("zero test needs mu' > 0 or gamma' > 0"));
    }
    if mu == 0.0 {
        return Ok(2.0 * norm(c) <= gamma);
    }
    let half_norm = c
        .iter()
        .zip(lam)
        .map(|(ck, lk)| lk * ck * ck)
        .sum::<f64>()
        .sqrt();
    if 2.0 * half_norm <= mu {
        return Ok(true);
    }
    if gamma == 0.0 {
        return Ok(false);
    }

    // Ridge path beta(rho)_k = 2 mu sqrt(l_k) c_k / (mu^2 + rho l_k); its norm falls
    // from 2||K^{1/2} R|| / mu > 1 at rho = 0 to 0 as rho grows.
    let mu2 = mu * mu;
    let beta_norm = |rho: f64| -> f64 {
        c.iter()
            .zip(lam)
            .map(|(&ck, &lk)| {
                let b = 2.0 * mu * lk.sqrt() * ck / (mu2 + rho * lk);
                b * b
            })
            .sum::<f64>()
            .sqrt()
    };
    let mut hi = 1.0;
    let mut guard = 0;
    while beta_norm(hi) >= 1.0 {
        hi *= 2.0;
        guard += 1;
        if guard > 2000 {
            return Err(Error::numerical(
                Some(group.to_string()),
                "could not bracket the ridge multiplier in the zero test",
            ));
        }
    }
    let mut lo = 1e-12;
    let log_scale = beta_norm(lo) > 1.0;
    if !log_scale {
        lo = 0.0;
    }
    let mut rho = hi;
    for _ in 0..300 {
        rho = if log_scale { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        let b = beta_norm(rho);
        if (b - 1.0).abs() <= 1e-10 {
            break;
        }
        if b > 1.0 {
            lo = rho;
        } else {
            hi = rho;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    // J at the constrained ridge solution: 2 c_k rho l_k / (mu^2 + rho l_k)
    let j: f64 = c
        .iter()
        .zip(lam)
        .map(|(&ck, &lk)| {
            let e = 2.0 * ck * rho * lk / (mu2 + rho * lk);
            e * e
        })
        .sum();
    Ok(j <= gamma * gamma)
}

/// Decides whether `theta_v = 0` minimizes the block criterion for partial residual `r`.
pub fn zero_test(r: &DVector<f64>, bundle: &GramBundle, mu: f64, gamma: f64) -> Result<bool> {
    if r.len() != bundle.n() {
        return Err(Error::argument("residual length does not match Gram matrix"));
    }
    let c = bundle.to_eigen(r);
    zero_test_eigen(c.as_slice(), bundle.eigenvalues.as_slice(), mu, gamma, &bundle.group)
}

fn mu0_eigen(c: &[f64], lam: &[f64], gamma: f64) -> Vec<f64> {
    let cn = norm(c);
    let shrink = if cn > 0.0 { (1.0 - gamma / (2.0 * cn)).max(0.0) } else { 0.0 };
    c.iter().zip(lam).map(|(ck, lk)| shrink * ck / lk).collect()
}

/// Closed-form block minimizer for `mu' = 0`: `(1 - gamma' / ||2R||)_+ K^{-1} R`.
pub fn solve_block_mu0(r: &DVector<f64>, bundle: &GramBundle, gamma: f64) -> DVector<f64> {
    let c = bundle.to_eigen(r);
    let t = mu0_eigen(c.as_slice(), bundle.eigenvalues.as_slice(), gamma);
    bundle.from_eigen(&DVector::from_vec(t))
}

/// Ridge multipliers `(rho1, rho2) = (gamma' / 2||K t||, mu' / 2||K^{1/2} t||)` at `t`.
fn multipliers(lam: &[f64], t: &[f64], mu: f64, gamma: f64) -> Option<(f64, f64)> {
    let mut kt = 0.0;
    let mut half = 0.0;
    for (&lk, &tk) in lam.iter().zip(t) {
        kt += lk * lk * tk * tk;
        half += lk * tk * tk;
    }
    if kt <= 0.0 || half <= 0.0 {
        return None;
    }
    Some((gamma / (2.0 * kt.sqrt()), mu / (2.0 * half.sqrt())))
}

/// `t_k(rho) = c_k / ((1 + rho1) l_k + rho2)`.
fn ridge_point(c: &[f64], lam: &[f64], rho1: f64, rho2: f64) -> Vec<f64> {
    c.iter()
        .zip(lam)
        .map(|(ck, lk)| ck / ((1.0 + rho1) * lk + rho2))
        .collect()
}

/// One Newton step on `rho = Psi(rho)`, where `Psi` maps multipliers to the
/// multipliers of the ridge point they generate.
fn newton_multipliers(c: &[f64], lam: &[f64], rho1: f64, rho2: f64, mu: f64, gamma: f64) -> Option<(f64, f64)> {
    let (mut a2, mut b2) = (0.0, 0.0);
    let (mut da1, mut da2, mut db1, mut db2) = (0.0, 0.0, 0.0, 0.0);
    for (&ck, &lk) in c.iter().zip(lam) {
        let den = (1.0 + rho1) * lk + rho2;
        let t = ck / den;
        let dt1 = -t * lk / den;
        let dt2 = -t / den;
        a2 += lk * lk * t * t;
        b2 += lk * t * t;
        da1 += lk * lk * t * dt1;
        da2 += lk * lk * t * dt2;
        db1 += lk * t * dt1;
        db2 += lk * t * dt2;
    }
    if a2 <= 0.0 || b2 <= 0.0 {
        return None;
    }
    let (a, b) = (a2.sqrt(), b2.sqrt());
    // d a / d rho_j = (sum l^2 t dt_j) / a
    let (da1, da2, db1, db2) = (da1 / a, da2 / a, db1 / b, db2 / b);
    let psi1 = gamma / (2.0 * a);
    let psi2 = mu / (2.0 * b);
    let f1 = rho1 - psi1;
    let f2 = rho2 - psi2;
    // J = I - D Psi, D Psi_1 = -gamma / (2 a^2) da, D Psi_2 = -mu / (2 b^2) db
    let j11 = 1.0 + gamma / (2.0 * a2) * da1;
    let j12 = gamma / (2.0 * a2) * da2;
    let j21 = mu / (2.0 * b2) * db1;
    let j22 = 1.0 + mu / (2.0 * b2) * db2;
    if gamma == 0.0 {
        if j22 == 0.0 {
            return None;
        }
        let r2 = rho2 - f2 / j22;
        return (r2 > 0.0 && r2.is_finite()).then_some((0.0, r2));
    }
    let det = j11 * j22 - j12 * j21;
    if det == 0.0 || !det.is_finite() {
        return None;
    }
    let r1 = rho1 - (j22 * f1 - j12 * f2) / det;
    let r2 = rho2 - (-j21 * f1 + j11 * f2) / det;
    (r1 >= 0.0 && r2 > 0.0 && r1.is_finite() && r2.is_finite()).then_some((r1, r2))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn solve_block_eigen(
    c: &[f64],
    lam: &[f64],
    mu: f64,
    gamma: f64,
    start: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    group: &GroupIndex,
) -> Result<Vec<f64>> {
    if !(mu > 0.0) {
        return Err(Error::argument("nonzero block solver needs mu' > 0"));
    }
    let mut t: Vec<f64> = match start {
        Some(s) if norm(s) > 0.0 => s.to_vec(),
        _ => {
            let rho1 = gamma / (2.0 * norm(c).max(f64::MIN_POSITIVE));
            let interp: f64 = c.iter().zip(lam).map(|(ck, lk)| ck * ck / lk).sum::<f64>().sqrt();
            let rho2 = mu / (2.0 * interp.max(f64::MIN_POSITIVE));
            ridge_point(c, lam, rho1, rho2)
        }
    };
    let mut f = block_objective_eigen(c, lam, &t, mu, gamma);
    let mut beta = 1.0;
    let mut last_step = f64::INFINITY;
    for _ in 0..max_iter {
        let Some((rho1, rho2)) = multipliers(lam, &t, mu, gamma) else {
            return Err(Error::numerical(Some(group.to_string()), "block iterate collapsed to zero"));
        };
        let phi = ridge_point(c, lam, rho1, rho2);
        let step = t.iter().zip(&phi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        last_step = step;
        if step <= tol * norm(&t).max(1.0) {
            return Ok(t);
        }

        let mut best: Vec<f64> = t.iter().zip(&phi).map(|(a, b)| a + beta * (b - a)).collect();
        let mut f_best = block_objective_eigen(c, lam, &best, mu, gamma);
        if let Some((n1, n2)) = newton_multipliers(c, lam, rho1, rho2, mu, gamma) {
            let cand = ridge_point(c, lam, n1, n2);
            let f_cand = block_objective_eigen(c, lam, &cand, mu, gamma);
            if f_cand < f_best {
                best = cand;
                f_best = f_cand;
            }
        }
        if f_best > f + 1e-14 * f.abs().max(1.0) {
            beta *= 0.5;
            if beta < 1e-8 {
                break;
            }
            continue;
        }
        t = best;
        f = f_best;
    }
    Err(Error::numerical(
        Some(group.to_string()),
        format!("block fixed point did not converge (last step {last_step:e})"),
    ))
}

/// Nonzero block minimizer for `mu' > 0`: solves
/// `theta = (mu'/(2||K^{1/2} theta||) I + K + gamma'/(2||K theta||) K)^{-1} R`
/// by damped fixed-point iteration with Newton steps on the two multipliers.
pub fn solve_block(
    r: &DVector<f64>,
    bundle: &GramBundle,
    mu: f64,
    gamma: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DVector<f64>> {
    let c = bundle.to_eigen(r);
    let t = solve_block_eigen(
        c.as_slice(),
        bundle.eigenvalues.as_slice(),
        mu,
        gamma,
        None,
        tol,
        max_iter,
        &bundle.group,
    )?;
    Ok(bundle.from_eigen(&DVector::from_vec(t)))
}

/// Per-group working data of a fit, in eigen coordinates.
struct Block<'a> {
    bundle: &'a GramBundle,
    mu: f64,
    gamma: f64,
    t: Vec<f64>,
    fitted: DVector<f64>,
}

impl Block<'_> {
    fn lam(&self) -> &[f64] {
        self.bundle.eigenvalues.as_slice()
    }

    fn penalty(&self) -> f64 {
        let (mut kt, mut half) = (0.0, 0.0);
        for (&lk, &tk) in self.lam().iter().zip(&self.t) {
            kt += lk * lk * tk * tk;
            half += lk * tk * tk;
        }
        self.gamma * kt.sqrt() + self.mu * half.sqrt()
    }

    fn set(&mut self, t: Vec<f64>) {
        let scaled = DVector::from_iterator(t.len(), t.iter().zip(self.lam()).map(|(tk, lk)| tk * lk));
        self.fitted = self.bundle.from_eigen(&scaled);
        self.t = t;
    }
}

/// Minimizes `C'` by cyclic block coordinate descent, optionally warm-started.
pub fn fit(
    y: &DVector<f64>,
    grams: &[GramBundle],
    weights: &PenaltyWeights,
    config: &FitConfig,
    warm: Option<&SolverState>,
) -> Result<FitResult> {
    let n = check_dims(y, grams)?;
    if grams.is_empty() {
        return Err(Error::argument("no groups to fit"));
    }
    if weights.len() != grams.len() {
        return Err(Error::argument("one penalty pair per group is required"));
    }
    let all_mu_zero = weights.mu.iter().all(|&m| m == 0.0);
    if all_mu_zero && weights.gamma.iter().all(|&g| g == 0.0) {
        return Err(Error::argument(
            "all penalties are zero: the blocks are not identifiable",
        ));
    }
    if all_mu_zero && !config.allow_zero_ridge {
        return Err(Error::argument(
            "all mu' are zero: the blocks are not identifiable (set allow_zero_ridge to override)",
        ));
    }

    let mut blocks: Vec<Block> = grams
        .iter()
        .enumerate()
        .map(|(i, b)| Block {
            bundle: b,
            mu: weights.mu[i],
            gamma: weights.gamma[i],
            t: vec![0.0; n],
            fitted: DVector::zeros(n),
        })
        .collect();
    if let Some(state) = warm {
        for block in blocks.iter_mut() {
            if let Some(theta) = state.theta.get(&block.bundle.group) {
                if theta.len() != n {
                    return Err(Error::argument("warm start has wrong coefficient length"));
                }
                let t = block.bundle.to_eigen(theta);
                block.set(t.as_slice().to_vec());
            }
        }
    }
    let mut total = DVector::zeros(n);
    for b in &blocks {
        total += &b.fitted;
    }
    let y_sum = y.sum();
    let intercept = |total: &DVector<f64>| (y_sum - total.sum()) / n as f64;
    let criterion = |blocks: &[Block], total: &DVector<f64>, f0: f64| {
        let rss = (y - total).add_scalar(-f0).norm_squared();
        rss + blocks.iter().map(Block::penalty).sum::<f64>()
    };

    let zero = numerical_zero(n);
    let mut f0 = intercept(&total);
    let mut trace = vec![criterion(&blocks, &total, f0)];
    let mut converged = false;
    let mut sweeps = 0;
    let mut final_step = f64::INFINITY;

    while sweeps < config.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for block in blocks.iter_mut() {
            f0 = intercept(&total);
            let r = (y - &total + &block.fitted).add_scalar(-f0);
            let c = block.bundle.to_eigen(&r);
            let c = c.as_slice();
            let lam = block.bundle.eigenvalues.as_slice();
            let group = &block.bundle.group;

            let mut t_new = if block.mu == 0.0 && block.gamma == 0.0 {
                c.iter().zip(lam).map(|(ck, lk)| ck / lk).collect()
            } else if zero_test_eigen(c, lam, block.mu, block.gamma, group)? {
                vec![0.0; n]
            } else if block.mu == 0.0 {
                mu0_eigen(c, lam, block.gamma)
            } else {
                let start = (norm(&block.t) > 0.0).then_some(block.t.as_slice());
                solve_block_eigen(
                    c,
                    lam,
                    block.mu,
                    block.gamma,
                    start,
                    config.block_tol,
                    config.block_max_iter,
                    group,
                )?
            };
            if norm(&t_new) <= zero {
                t_new.iter_mut().for_each(|x| *x = 0.0);
            }
            // keep the previous block if the inexact solve would raise the criterion
            let old_obj = block_objective_eigen(c, lam, &block.t, block.mu, block.gamma);
            let new_obj = block_objective_eigen(c, lam, &t_new, block.mu, block.gamma);
            if new_obj > old_obj {
                continue;
            }
            let diff = block.t.iter().zip(&t_new).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let scale = norm(&block.t).max(norm(&t_new)).max(1.0);
            max_change = max_change.max(diff / scale);
            if diff > 0.0 {
                total -= &block.fitted;
                block.set(t_new);
                total += &block.fitted;
            }
        }
        f0 = intercept(&total);
        let obj = criterion(&blocks, &total, f0);
        trace.push(obj);
        final_step = max_change;
        if max_change <= config.tol {
            converged = true;
            break;
        }
    }

    let theta = blocks
        .iter()
        .filter(|b| norm(&b.t) > 0.0)
        .map(|b| (b.bundle.group.clone(), b.bundle.from_eigen(&DVector::from_column_slice(&b.t))))
        .collect();
    Ok(FitResult {
        state: SolverState { f0, theta },
        objective_trace: trace,
        sweeps,
        converged,
        final_step_norm: final_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gram::{enumerate_groups, GramSystem, JitterPolicy};
    use crate::kernel::{KernelFamily, KernelSet};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> GramBundle {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
        let k = &a * a.transpose() + DMatrix::identity(n, n) * 0.05;
        GramBundle::from_raw(GroupIndex::singleton(0), k, JitterPolicy::default()).unwrap()
    }

    fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn toy_system(n: usize, d: usize, dmax: usize, seed: u64) -> (DVector<f64>, GramSystem) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, d, |_, _| rng.random::<f64>());
        let ks = KernelSet::unit_uniform(KernelFamily::Matern, d).unwrap();
        let groups = enumerate_groups(d, dmax).unwrap();
        let sys = GramSystem::build(&x, &ks, &groups, JitterPolicy::default()).unwrap();
        let y = DVector::from_fn(n, |i, _| (3.0 * x[(i, 0)]).sin() + 0.3 * rng.random::<f64>());
        (y, sys)
    }

    #[test]
    fn objective_at_mean_is_total_sum_of_squares() {
        let (y, sys) = toy_system(8, 2, 2, 1);
        let w = PenaltyWeights::constant(sys.len(), 1.0, 1.0).unwrap();
        let mean = y.mean();
        let state = SolverState::intercept_only(mean);
        let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        assert!((objective(&state, &y, sys.bundles(), &w).unwrap() - tss).abs() < 1e-12);
    }

    #[test]
    fn objective_matches_definition() {
        let (y, sys) = toy_system(6, 2, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut theta = BTreeMap::new();
        for b in sys.bundles() {
            theta.insert(b.group.clone(), random_vec(6, &mut rng) * 0.01);
        }
        let state = SolverState { f0: 0.3, theta };
        let w = PenaltyWeights::new(vec![0.5, 0.1, 0.7], vec![0.2, 0.0, 0.4]).unwrap();
        // second route: explicit sums over entries
        let mut fit = [0.3; 6];
        let mut pen = 0.0;
        for (i, b) in sys.bundles().iter().enumerate() {
            let th = &state.theta[&b.group];
            let mut kt = vec![0.0; 6];
            for r in 0..6 {
                for s in 0..6 {
                    kt[r] += b.k[(r, s)] * th[s];
                }
                fit[r] += kt[r];
            }
            let quad: f64 = (0..6).map(|r| (0..6).map(|s| th[r] * b.k[(r, s)] * th[s]).sum::<f64>()).sum();
            pen += w.gamma[i] * norm(&kt) + w.mu[i] * quad.sqrt();
        }
        let rss: f64 = (0..6).map(|r| (y[r] - fit[r]).powi(2)).sum();
        let got = objective(&state, &y, sys.bundles(), &w).unwrap();
        assert!((got - (rss + pen)).abs() < 1e-10 * (rss + pen));

        let zero_pen = PenaltyWeights::constant(3, 0.0, 0.0).unwrap();
        assert!((objective(&state, &y, sys.bundles(), &zero_pen).unwrap() - rss).abs() < 1e-10);
    }

    #[test]
    fn intercept_update() {
        let (y, sys) = toy_system(7, 2, 1, 4);
        assert!((update_intercept(&y, &SolverState::intercept_only(0.0), sys.bundles()).unwrap() - y.mean()).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut theta = BTreeMap::new();
        theta.insert(sys.bundles()[1].group.clone(), random_vec(7, &mut rng));
        let mut state = SolverState { f0: 0.0, theta };
        state.f0 = update_intercept(&y, &state, sys.bundles()).unwrap();
        // d C' / d f0 = -2 sum(residual)
        let resid = y - sys.bundles()[1].k.clone() * &state.theta[&sys.bundles()[1].group];
        let grad = -2.0 * (resid.add_scalar(-state.f0)).sum();
        assert!(grad.abs() < 1e-10);
    }

    #[test]
    fn intercept_hand_computed() {
        // n = 3, one group with K = diag(1, 2, 3), theta = (1, 1, 1)
        let k = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0]));
        let b = GramBundle::from_raw(GroupIndex::singleton(0), k, JitterPolicy::Off).unwrap();
        let y = DVector::from_vec(vec![4.0, 5.0, 9.0]);
        let mut theta = BTreeMap::new();
        theta.insert(GroupIndex::singleton(0), DVector::from_vec(vec![1.0, 1.0, 1.0]));
        let state = SolverState { f0: 0.0, theta };
        // mean(Y) = 6, mean(K theta) = 2
        assert!((update_intercept(&y, &state, &[b]).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn residual_examples() {
        let (y, sys) = toy_system(5, 2, 2, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = &sys.bundles()[0].group;
        let empty = SolverState::intercept_only(0.25);
        assert!((residual(&y, &empty, sys.bundles(), g).unwrap() - y.add_scalar(-0.25)).amax() < 1e-15);

        let t1 = random_vec(5, &mut rng);
        let t2 = random_vec(5, &mut rng);
        let mut theta = BTreeMap::new();
        theta.insert(sys.bundles()[0].group.clone(), t1.clone());
        theta.insert(sys.bundles()[2].group.clone(), t2.clone());
        let state = SolverState { f0: 0.1, theta };
        let r = residual(&y, &state, sys.bundles(), g).unwrap();
        let manual = &y - &sys.bundles()[2].k * &t2 - DVector::from_element(5, 0.1);
        assert!((r - manual).amax() < 1e-14);
        // only its own group present
        let mut own = BTreeMap::new();
        own.insert(g.clone(), t1);
        let single = SolverState { f0: 0.1, theta: own };
        assert!((residual(&y, &single, sys.bundles(), g).unwrap() - y.add_scalar(-0.1)).amax() < 1e-15);
    }

    #[test]
    fn zero_test_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let b = random_spd(4, &mut rng);
        let mut r = random_vec(4, &mut rng);
        r *= 0.5 / r.norm(); // ||2R|| = 1
        assert!(zero_test(&r, &b, 0.0, 2.0).unwrap());
        assert!(!zero_test(&r, &b, 0.0, 0.5).unwrap());

        let mut r = random_vec(4, &mut rng);
        let half = (&b.sqrt * &r).norm();
        r *= 1.5 / half; // ||2 K^{1/2} R|| = 3
        assert!(!zero_test(&r, &b, 2.0, 0.0).unwrap());
        assert!(zero_test(&r, &b, 3.5, 0.0).unwrap());
        assert!(zero_test(&r, &b, 0.0, 0.0).is_err());
    }

    #[test]
    fn mu0_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = random_spd(5, &mut rng);
        let r = random_vec(5, &mut rng);
        let big = 2.0 * r.norm() + 0.1;
        assert_eq!(solve_block_mu0(&r, &b, big).norm(), 0.0);
        let interp = b.k.clone().lu().solve(&r).unwrap();
        assert!((solve_block_mu0(&r, &b, 0.0) - &interp).amax() < 1e-8 * interp.amax());

        let gamma = r.norm();
        let th = solve_block_mu0(&r, &b, gamma);
        let kt = &b.k * &th;
        let station = 2.0 * &b.k * (&kt - &r) + gamma * (&b.k * &kt) / kt.norm();
        assert!(station.amax() < 1e-8, "{}", station.amax());
    }

    #[test]
    fn solve_block_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let b = random_spd(6, &mut rng);
            let r = random_vec(6, &mut rng);
            let (mu, gamma) = (0.3 * rng.random::<f64>(), 0.5 * rng.random::<f64>());
            if zero_test(&r, &b, mu, gamma).unwrap() {
                continue;
            }
            let tol = 1e-10;
            let th = solve_block(&r, &b, mu, gamma, tol, 5000).unwrap();
            let rho1 = gamma / (2.0 * (&b.k * &th).norm());
            let rho2 = mu / (2.0 * (&b.sqrt * &th).norm());
            let m = &b.k * (1.0 + rho1) + DMatrix::identity(6, 6) * rho2;
            let phi = m.lu().solve(&r).unwrap();
            assert!((&phi - &th).norm() <= 1e-6 * th.norm().max(1.0));
            // consistency of the multipliers
            let again = (&b.k + &b.k * rho1 + DMatrix::identity(6, 6) * rho2).lu().solve(&r).unwrap();
            assert!((2.0 * rho1 * (&b.k * &again).norm() - gamma).abs() < 1e-6);
            assert!((2.0 * rho2 * (&b.sqrt * &again).norm() - mu).abs() < 1e-6);
        }
    }

    #[test]
    fn solve_block_continuous_at_mu_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = random_spd(5, &mut rng);
        let r = random_vec(5, &mut rng);
        let gamma = 0.5 * r.norm();
        let closed = solve_block_mu0(&r, &b, gamma);
        let th = solve_block(&r, &b, 1e-9, gamma, 1e-13, 20_000).unwrap();
        assert!((&th - &closed).norm() <= 1e-4 * closed.norm().max(1.0), "{} vs {}", th, closed);
    }

    #[test]
    fn solve_block_beats_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let b = random_spd(3, &mut rng);
        let r = random_vec(3, &mut rng);
        let (mu, gamma) = (0.05, 0.1);
        assert!(!zero_test(&r, &b, mu, gamma).unwrap());
        let th = solve_block(&r, &b, mu, gamma, 1e-12, 5000).unwrap();
        let best = block_objective(&r, &b, &th, mu, gamma);
        // dense grid around the unpenalized solution
        let center = b.k.clone().lu().solve(&r).unwrap();
        let span = 2.0 * center.amax().max(1.0);
        let m = 41;
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    let p = |s: usize| -span + 2.0 * span * s as f64 / (m - 1) as f64;
                    let cand = DVector::from_vec(vec![p(i), p(j), p(k)]);
                    assert!(best <= block_objective(&r, &b, &cand, mu, gamma) + 1e-6);
                }
            }
        }
    }

    #[test]
    fn fit_refuses_unidentifiable_penalties() {
        let (y, sys) = toy_system(6, 2, 2, 13);
        let zero = PenaltyWeights::constant(3, 0.0, 0.0).unwrap();
        assert!(matches!(fit(&y, sys.bundles(), &zero, &FitConfig::default(), None), Err(Error::Argument(_))));
        let gamma_only = PenaltyWeights::constant(3, 0.0, 0.5).unwrap();
        assert!(fit(&y, sys.bundles(), &gamma_only, &FitConfig::default(), None).is_err());
        let cfg = FitConfig { allow_zero_ridge: true, ..FitConfig::default() };
        assert!(fit(&y, sys.bundles(), &gamma_only, &cfg, None).is_ok());
    }

    #[test]
    fn fit_descends_and_is_block_optimal() {
        let (y, sys) = toy_system(20, 3, 2, 14);
        let w = PenaltyWeights::constant(sys.len(), 0.05, 0.05).unwrap();
        let cfg = FitConfig::default();
        let res = fit(&y, sys.bundles(), &w, &cfg, None).unwrap();
        assert!(res.converged);
        assert!(res.objective_trace.windows(2).all(|p| p[1] <= p[0] + 1e-10));
        let recomputed = objective(&res.state, &y, sys.bundles(), &w).unwrap();
        assert!((recomputed - res.objective()).abs() < 1e-8 * recomputed);
        assert!(!res.state.theta.is_empty());

        for (i, b) in sys.bundles().iter().enumerate() {
            let r = residual(&y, &res.state, sys.bundles(), &b.group).unwrap();
            let old = res.state.theta.get(&b.group).cloned().unwrap_or_else(|| DVector::zeros(20));
            let new = if zero_test(&r, b, w.mu[i], w.gamma[i]).unwrap() {
                DVector::zeros(20)
            } else {
                solve_block(&r, b, w.mu[i], w.gamma[i], 1e-12, 5000).unwrap()
            };
            let scale = old.norm().max(new.norm()).max(1.0);
            assert!((new - old).norm() / scale <= 10.0 * cfg.tol);
        }
    }

    #[test]
    fn recovers_single_active_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let n = 30;
        let x = DMatrix::from_fn(n, 3, |_, _| rng.random::<f64>());
        let ks = KernelSet::unit_uniform(KernelFamily::Matern, 3).unwrap();
        let groups = enumerate_groups(3, 2).unwrap();
        let sys = GramSystem::build(&x, &ks, &groups, JitterPolicy::default()).unwrap();
        // y = 1 + f_{2}(x2) with f_{2} in H_{2}
        let alpha = random_vec(n, &mut rng);
        let f = &sys.bundles()[1].k * &alpha;
        let y = f.add_scalar(1.0);
        let w = PenaltyWeights::constant(sys.len(), 1e-3, 1e-3).unwrap();
        let res = fit(&y, sys.bundles(), &w, &FitConfig::default(), None).unwrap();
        assert!(res.state.theta.contains_key(&GroupIndex::singleton(1)));
    }

    #[test]
    fn permutation_equivariance() {
        let n = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random::<f64>());
        let y = DVector::from_fn(n, |i, _| x[(i, 0)] * x[(i, 1)] + 0.1 * rng.random::<f64>());
        let perm: Vec<usize> = (0..n).rev().collect();
        let xp = DMatrix::from_fn(n, 2, |i, j| x[(perm[i], j)]);
        let yp = DVector::from_fn(n, |i, _| y[perm[i]]);
        let ks = KernelSet::unit_uniform(KernelFamily::Gaussian, 2).unwrap();
        let groups = enumerate_groups(2, 2).unwrap();
        let s1 = GramSystem::build(&x, &ks, &groups, JitterPolicy::default()).unwrap();
        let s2 = GramSystem::build(&xp, &ks, &groups, JitterPolicy::default()).unwrap();
        let w = PenaltyWeights::constant(3, 0.02, 0.01).unwrap();
        let cfg = FitConfig { tol: 1e-12, ..FitConfig::default() };
        let a = fit(&y, s1.bundles(), &w, &cfg, None).unwrap();
        let b = fit(&yp, s2.bundles(), &w, &cfg, None).unwrap();
        assert!((a.state.f0 - b.state.f0).abs() < 1e-10);
        assert!((a.objective() - b.objective()).abs() < 1e-10);
        for (g, ta) in &a.state.theta {
            let tb = &b.state.theta[g];
            let fa = &s1.bundles()[s1.position(g).unwrap()].k * ta;
            let fb = &s2.bundles()[s2.position(g).unwrap()].k * tb;
            for i in 0..n {
                assert!((fa[perm[i]] - fb[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn larger_penalties_never_grow_the_support() {
        let (y, sys) = toy_system(25, 3, 2, 17);
        let base = PenaltyWeights::constant(sys.len(), 0.02, 0.02).unwrap();
        let mut prev: Option<BTreeSet<GroupIndex>> = None;
        let mut warm: Option<SolverState> = None;
        for c in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0] {
            let res = fit(&y, sys.bundles(), &base.scaled(c), &FitConfig::default(), warm.as_ref()).unwrap();
            let support = res.state.support();
            if let Some(p) = &prev {
                assert!(support.is_subset(p), "{support:?} vs {p:?}");
            }
            prev = Some(support);
            warm = Some(res.state);
        }
    }
}
