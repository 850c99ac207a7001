//! Variance decomposition and Sobol indices of a fitted metamodel.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gram::{build_omegas, GroupIndex, OmegaBundle};
use crate::select::Metamodel;

/// Quadratic forms below this are treated as construction errors rather than
/// rounding noise.
pub const NEGATIVE_VARIANCE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMethod {
    /// `theta_v^T Omega_v theta_v`.
    Quadratic,
    /// Sample variance of `f_v` over an evaluation design.
    Empirical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupVariances {
    pub method: VarianceMethod,
    pub values: BTreeMap<GroupIndex, f64>,
    /// Groups whose slightly negative quadratic form was set to zero.
    pub clamped: Vec<GroupIndex>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolReport {
    pub method: VarianceMethod,
    pub per_group_variance: BTreeMap<GroupIndex, f64>,
    pub total_variance: f64,
    pub indices: BTreeMap<GroupIndex, f64>,
    /// `G_a`, one per input coordinate.
    pub global_indices: Vec<f64>,
    pub clamped: Vec<GroupIndex>,
}

/// Omega matrices of the model's active groups over its training design.
pub fn model_omegas(model: &Metamodel) -> Result<Vec<OmegaBundle>> {
    let groups: Vec<GroupIndex> = model.coefficients().keys().cloned().collect();
    if groups.is_empty() {
        return Ok(Vec::new());
    }
    build_omegas(model.training_design(), &groups, model.kernels().kernels())
}

/// `Var(f_v(X)) = theta_v^T Omega_v theta_v` for every group with an Omega
/// matrix; inactive groups get 0.
pub fn variance_quadratic(model: &Metamodel, omegas: &[OmegaBundle]) -> Result<GroupVariances> {
    let n = model.training_design().nrows();
    let mut values = BTreeMap::new();
    let mut clamped = Vec::new();
    for g in model.coefficients().keys() {
        if !omegas.iter().any(|o| &o.group == g) {
            return Err(Error::argument(format!("no Omega matrix for active group {g}")));
        }
    }
    for o in omegas {
        if o.omega.nrows() != n || o.omega.ncols() != n {
            return Err(Error::argument(format!(
                "Omega matrix of group {} does not match the training design",
                o.group
            )));
        }
        let v = match model.coefficients().get(&o.group) {
            Some(theta) => theta.dot(&(&o.omega * theta)),
            None => 0.0,
        };
        let v = if v < 0.0 {
            if v < -NEGATIVE_VARIANCE_TOLERANCE {
                return Err(Error::numerical(
                    Some(o.group.to_string()),
                    format!("quadratic form is negative ({v:e})"),
                ));
            }
            clamped.push(o.group.clone());
            0.0
        } else {
            v
        };
        values.insert(o.group.clone(), v);
    }
    Ok(GroupVariances {
        method: VarianceMethod::Quadratic,
        values,
        clamped,
    })
}

/// Sample variance (denominator `m - 1`) of each active component over the rows
/// of `x_eval`.
pub fn variance_empirical(model: &Metamodel, x_eval: &DMatrix<f64>) -> Result<GroupVariances> {
    let m = x_eval.nrows();
    if m < 2 {
        return Err(Error::argument("empirical variances need at least 2 evaluation points"));
    }
    let values = model
        .components(x_eval)?
        .into_iter()
        .map(|(g, f)| {
            let mean = f.mean();
            let var = f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1) as f64;
            (g, var)
        })
        .collect();
    Ok(GroupVariances {
        method: VarianceMethod::Empirical,
        values,
        clamped: Vec::new(),
    })
}

/// Normalizes group variances into Sobol indices `S_v` and aggregates the
/// global indices `G_a = sum_{v contains a} S_v` over `d` coordinates.
pub fn sobol_indices(variances: &GroupVariances, d: usize) -> Result<SobolReport> {
    if variances.values.values().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::argument("variances must be finite and nonnegative"));
    }
    if let Some(g) = variances.values.keys().find(|g| g.max_member() >= d) {
        return Err(Error::argument(format!("group {g} exceeds dimension {d}")));
    }
    let total: f64 = variances.values.values().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(
            "model has no variance (intercept-only): Sobol indices are undefined".into(),
        ));
    }
    let indices: BTreeMap<GroupIndex, f64> = variances
        .values
        .iter()
        .map(|(g, v)| (g.clone(), v / total))
        .collect();
    let mut global = vec![0.0; d];
    for (g, s) in &indices {
        for &a in g.members() {
            global[a] += s;
        }
    }
    Ok(SobolReport {
        method: variances.method,
        per_group_variance: variances.values.clone(),
        total_variance: total,
        indices,
        global_indices: global,
        clamped: variances.clamped.clone(),
    })
}

/// Quadratic-form Sobol report of a model.
pub fn sobol_report(model: &Metamodel) -> Result<SobolReport> {
    let omegas = model_omegas(model)?;
    sobol_indices(&variance_quadratic(model, &omegas)?, model.dim())
}
