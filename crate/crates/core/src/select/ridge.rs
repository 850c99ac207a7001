use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gram::{GramSystem, GroupIndex};
use crate::kernel::KernelSet;

use super::metamodel::Metamodel;

/// Solution of the ridge problem on a fixed support. Every group in the
/// support shares the coefficient vector `alpha`.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeSolution {
    pub f0: f64,
    pub alpha: DVector<f64>,
}

/// Sum of the Gram matrices of `support`.
pub fn support_gram(sys: &GramSystem, support: &[GroupIndex]) -> Result<DMatrix<f64>> {
    if support.is_empty() {
        return Err(Error::argument("ridge refit needs a nonempty support"));
    }
    let mut kbar = DMatrix::zeros(sys.n(), sys.n());
    for g in support {
        let pos = sys
            .position(g)
            .ok_or_else(|| Error::argument(format!("group {g} is not a candidate group")))?;
        kbar += &sys.bundles()[pos].k;
    }
    Ok(kbar)
}

/// Minimizes `||Y - f0 1 - Kbar alpha||^2 + lambda n alpha^T Kbar alpha`.
///
/// Stationarity gives `(Kbar + lambda n I) alpha = Y - f0 1` and `1^T alpha = 0`.
pub fn ridge_solve(kbar: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<RidgeSolution> {
    let n = y.len();
    if kbar.nrows() != n || kbar.ncols() != n {
        return Err(Error::argument("Gram matrix and response differ in size"));
    }
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::argument("ridge parameter must be positive"));
    }
    let mut a = kbar.clone();
    for i in 0..n {
        a[(i, i)] += lambda * n as f64;
    }
    let chol = Cholesky::new(a).ok_or_else(|| Error::numerical(None, "ridge system is not positive definite"))?;
    let ones = DVector::from_element(n, 1.0);
    let ainv_y = chol.solve(y);
    let ainv_1 = chol.solve(&ones);
    let denom = ainv_1.sum();
    if !(denom > 0.0) {
        return Err(Error::numerical(None, "ridge intercept equation is singular"));
    }
    let f0 = ainv_y.sum() / denom;
    let alpha = ainv_y - ainv_1 * f0;
    Ok(RidgeSolution { f0, alpha })
}

/// `count` log-spaced values in `[lo, hi] * trace(Kbar) / n`, largest first.
pub fn lambda_grid(kbar: &DMatrix<f64>, count: usize, lo: f64, hi: f64) -> Result<Vec<f64>> {
    if count == 0 || !(lo > 0.0) || !(hi >= lo) {
        return Err(Error::argument("lambda grid needs count >= 1 and 0 < lo <= hi"));
    }
    let scale = kbar.trace() / kbar.nrows() as f64;
    if !(scale > 0.0) {
        return Err(Error::Degenerate("support Gram matrix has zero trace".into()));
    }
    if count == 1 {
        return Ok(vec![hi * scale]);
    }
    let (llo, lhi) = (lo.ln(), hi.ln());
    Ok((0..count)
        .map(|i| (lhi - (lhi - llo) * i as f64 / (count - 1) as f64).exp() * scale)
        .collect())
}

/// Ridge estimator on support `support` with parameter `lambda`, as a metamodel.
pub fn ridge_refit(
    y: &DVector<f64>,
    sys: &GramSystem,
    support: &[GroupIndex],
    lambda: f64,
    kernels: Arc<KernelSet>,
    training_x: Arc<DMatrix<f64>>,
) -> Result<Metamodel> {
    let kbar = support_gram(sys, support)?;
    let sol = ridge_solve(&kbar, y, lambda)?;
    let coefficients: BTreeMap<GroupIndex, DVector<f64>> =
        support.iter().map(|g| (g.clone(), sol.alpha.clone())).collect();
    Metamodel::new(sol.f0, coefficients, kernels, training_x)
}
