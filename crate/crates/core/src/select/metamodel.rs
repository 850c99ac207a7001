use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gram::GroupIndex;
use crate::kernel::KernelSet;
use crate::solver::SolverState;

/// Fitted ANOVA-RKHS model
/// `f(x) = f0 + sum_v sum_i theta_{v,i} k_v(X_{v,i}, x_v)`.
#[derive(Debug, Clone)]
pub struct Metamodel {
    f0: f64,
    coefficients: BTreeMap<GroupIndex, DVector<f64>>,
    kernels: Arc<KernelSet>,
    training_x: Arc<DMatrix<f64>>,
}

impl Metamodel {
    pub fn new(
        f0: f64,
        coefficients: BTreeMap<GroupIndex, DVector<f64>>,
        kernels: Arc<KernelSet>,
        training_x: Arc<DMatrix<f64>>,
    ) -> Result<Self> {
        if !f0.is_finite() {
            return Err(Error::argument("intercept must be finite"));
        }
        if training_x.ncols() != kernels.dim() {
            return Err(Error::argument("training design and kernel set differ in dimension"));
        }
        let n = training_x.nrows();
        for (g, theta) in &coefficients {
            if theta.len() != n {
                return Err(Error::argument(format!(
                    "coefficients of group {g} have length {}, expected {n}",
                    theta.len()
                )));
            }
            if g.max_member() >= kernels.dim() {
                return Err(Error::argument(format!("group {g} exceeds the input dimension")));
            }
        }
        Ok(Metamodel {
            f0,
            coefficients,
            kernels,
            training_x,
        })
    }

    pub fn intercept_only(f0: f64, kernels: Arc<KernelSet>, training_x: Arc<DMatrix<f64>>) -> Result<Self> {
        Self::new(f0, BTreeMap::new(), kernels, training_x)
    }

    pub fn from_state(state: &SolverState, kernels: Arc<KernelSet>, training_x: Arc<DMatrix<f64>>) -> Result<Self> {
        Self::new(state.f0, state.theta.clone(), kernels, training_x)
    }

    pub fn f0(&self) -> f64 {
        self.f0
    }

    pub fn coefficients(&self) -> &BTreeMap<GroupIndex, DVector<f64>> {
        &self.coefficients
    }

    pub fn kernels(&self) -> &Arc<KernelSet> {
        &self.kernels
    }

    pub fn training_design(&self) -> &Arc<DMatrix<f64>> {
        &self.training_x
    }

    pub fn support(&self) -> BTreeSet<GroupIndex> {
        self.coefficients.keys().cloned().collect()
    }

    pub fn dim(&self) -> usize {
        self.kernels.dim()
    }

    /// Component values `f_v(x_new)` for every active group.
    pub fn components(&self, x_new: &DMatrix<f64>) -> Result<BTreeMap<GroupIndex, DVector<f64>>> {
        let groups: Vec<GroupIndex> = self.coefficients.keys().cloned().collect();
        let grams = group_cross_grams(&self.kernels, x_new, &self.training_x, &groups)?;
        Ok(groups
            .into_iter()
            .zip(grams)
            .map(|(g, c)| {
                let v = &c * &self.coefficients[&g];
                (g, v)
            })
            .collect())
    }

    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
        let mut out = DVector::from_element(x_new.nrows(), self.f0);
        if x_new.ncols() != self.dim() {
            return Err(Error::argument(format!(
                "expected {} input columns, got {}",
                self.dim(),
                x_new.ncols()
            )));
        }
        for f in self.components(x_new)?.values() {
            out += f;
        }
        Ok(out)
    }
}

pub(crate) fn column(x: &DMatrix<f64>, a: usize) -> Vec<f64> {
    x.column(a).iter().copied().collect()
}

/// Cross-Gram matrices `[k_v(rows_i, cols_j)]` for each group, built from one
/// cross-Gram per coordinate.
pub fn group_cross_grams(
    kernels: &KernelSet,
    rows: &DMatrix<f64>,
    cols: &DMatrix<f64>,
    groups: &[GroupIndex],
) -> Result<Vec<DMatrix<f64>>> {
    let d = kernels.dim();
    if rows.ncols() != d || cols.ncols() != d {
        return Err(Error::argument(format!(
            "expected {d} input columns, got {} and {}",
            rows.ncols(),
            cols.ncols()
        )));
    }
    let mut per_coord: Vec<Option<DMatrix<f64>>> = vec![None; d];
    for g in groups {
        for &a in g.members() {
            if per_coord[a].is_none() {
                per_coord[a] = Some(kernels.get(a).cross_gram(&column(rows, a), &column(cols, a))?);
            }
        }
    }
    Ok(groups
        .iter()
        .map(|g| {
            let mut it = g.members().iter();
            let first = it.next().expect("groups are nonempty");
            let mut m = per_coord[*first].clone().expect("computed above");
            for &a in it {
                m.component_mul_assign(per_coord[a].as_ref().expect("computed above"));
            }
            m
        })
        .collect())
}

/// Mean squared error of `model` on `(y, x)`.
pub fn prediction_error(model: &Metamodel, y: &DVector<f64>, x: &DMatrix<f64>) -> Result<f64> {
    if y.is_empty() {
        return Err(Error::argument("prediction error needs a nonempty test set"));
    }
    if y.len() != x.nrows() {
        return Err(Error::argument("test responses and design differ in length"));
    }
    let pred = model.predict(x)?;
    Ok((y - pred).norm_squared() / y.len() as f64)
}
