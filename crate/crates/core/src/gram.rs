//! Variable subsets, per-group Gram matrices and their spectral data, the
//! `Omega` quadrature matrices, and the empirical critical rate.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::kernel::{symmetrize, CenteredKernel, KernelSet};

/// Nonempty, sorted set of distinct (0-based) input coordinates.
///
/// Displayed and serialized 1-based and pipe-joined, e.g. `"1|3"`.
/// Ordering is by size first, then lexicographic on the members.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GroupIndex(Vec<usize>);

impl GroupIndex {
    pub fn new(mut members: Vec<usize>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::argument("a group needs at least one coordinate"));
        }
        members.sort_unstable();
        let len = members.len();
        members.dedup();
        if members.len() != len {
            return Err(Error::argument("group members must be distinct"));
        }
        Ok(GroupIndex(members))
    }

    pub fn singleton(a: usize) -> Self {
        GroupIndex(vec![a])
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, a: usize) -> bool {
        self.0.binary_search(&a).is_ok()
    }

    pub fn max_member(&self) -> usize {
        *self.0.last().expect("nonempty group")
    }
}

impl Ord for GroupIndex {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.len().cmp(&other.0.len()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for GroupIndex {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for GroupIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str("|")?;
            }
            write!(f, "{}", a + 1)?;
        }
        Ok(())
    }
}

impl FromStr for GroupIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let members = s
            .split('|')
            .map(|t| match t.trim().parse::<usize>() {
                Ok(a) if a >= 1 => Ok(a - 1),
                _ => Err(Error::argument(format!("invalid group label `{s}`"))),
            })
            .collect::<Result<Vec<_>>>()?;
        GroupIndex::new(members)
    }
}

impl Serialize for GroupIndex {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for GroupIndex {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All subsets of `{0..d}` with `1 <= |v| <= dmax`, ordered by size then members.
pub fn enumerate_groups(d: usize, dmax: usize) -> Result<Vec<GroupIndex>> {
    if dmax < 1 || dmax > d {
        return Err(Error::argument(format!(
            "D_max must lie in [1, {d}], got {dmax}"
        )));
    }
    let mut out = Vec::new();
    for size in 1..=dmax {
        let mut comb: Vec<usize> = (0..size).collect();
        loop {
            out.push(GroupIndex(comb.clone()));
            // advance to the next combination in lexicographic order
            let mut i = size;
            while i > 0 && comb[i - 1] == d - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            comb[i - 1] += 1;
            for j in i..size {
                comb[j] = comb[j - 1] + 1;
            }
        }
    }
    Ok(out)
}

/// Diagonal shift applied to Gram matrices before factorization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum JitterPolicy {
    /// Shift so that the smallest eigenvalue is at least `scale * trace(K) / n`.
    Relative(f64),
    /// No shift; negative eigenvalues are still clamped to zero.
    Off,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy::Relative(1e-8)
    }
}

/// Gram matrix of one group together with its spectral decomposition.
#[derive(Debug, Clone)]
pub struct GramBundle {
    pub group: GroupIndex,
    /// Jittered Gram matrix.
    pub k: DMatrix<f64>,
    /// Symmetric square root, `sqrt^T sqrt = k`.
    pub sqrt: DMatrix<f64>,
    /// Eigenvalues, nonincreasing and nonnegative.
    pub eigenvalues: DVector<f64>,
    /// Orthonormal eigenvectors, one per column, matching `eigenvalues`.
    pub eigenvectors: DMatrix<f64>,
    pub jitter: f64,
}

impl GramBundle {
    /// Builds the bundle from an unjittered symmetric Gram matrix.
    pub fn from_raw(group: GroupIndex, mut raw: DMatrix<f64>, policy: JitterPolicy) -> Result<Self> {
        let n = raw.nrows();
        if n == 0 || raw.ncols() != n {
            return Err(Error::argument("Gram matrix must be square and nonempty"));
        }
        symmetrize(&mut raw);
        let label = group.to_string();
        let eig = SymmetricEigen::try_new(raw.clone(), f64::EPSILON, 10_000).ok_or_else(|| {
            Error::numerical(Some(label.clone()), "symmetric eigendecomposition did not converge")
        })?;
        if eig.eigenvalues.iter().any(|l| !l.is_finite()) {
            return Err(Error::numerical(Some(label), "non-finite eigenvalue"));
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let min_eig = eig.eigenvalues[order[n - 1]];
        let jitter = match policy {
            JitterPolicy::Relative(scale) => (scale * raw.trace() / n as f64 - min_eig).max(0.0),
            JitterPolicy::Off => 0.0,
        };

        let eigenvalues = DVector::from_iterator(
            n,
            order.iter().map(|&i| (eig.eigenvalues[i] + jitter).max(0.0)),
        );
        let mut eigenvectors = DMatrix::zeros(n, n);
        for (dst, &src) in order.iter().enumerate() {
            eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
        }

        let mut k = raw;
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        let mut scaled = eigenvectors.clone();
        for (j, lam) in eigenvalues.iter().enumerate() {
            scaled.column_mut(j).scale_mut(lam.sqrt());
        }
        let mut sqrt = &scaled * eigenvectors.transpose();
        symmetrize(&mut sqrt);

        Ok(GramBundle {
            group,
            k,
            sqrt,
            eigenvalues,
            eigenvectors,
            jitter,
        })
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    /// `U^T r`: coordinates of `r` in the eigenbasis.
    pub fn to_eigen(&self, r: &DVector<f64>) -> DVector<f64> {
        self.eigenvectors.tr_mul(r)
    }

    /// `U t`: back from eigen coordinates.
    pub fn from_eigen(&self, t: &DVector<f64>) -> DVector<f64> {
        &self.eigenvectors * t
    }
}

/// Hadamard product of the per-coordinate matrices over the group's members.
fn hadamard_over(group: &GroupIndex, per_coord: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut members = group.members().iter();
    let first = *members.next().expect("nonempty group");
    let mut out = per_coord[first].clone();
    for &a in members {
        out.component_mul_assign(&per_coord[a]);
    }
    out
}

fn column(x: &DMatrix<f64>, a: usize) -> Vec<f64> {
    x.column(a).iter().copied().collect()
}

fn check_design(x: &DMatrix<f64>, group: &GroupIndex, kernels: &[CenteredKernel]) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::argument("design has no rows"));
    }
    if group.max_member() >= x.ncols() || group.max_member() >= kernels.len() {
        return Err(Error::argument(format!(
            "group {group} exceeds design dimension {}",
            x.ncols().min(kernels.len())
        )));
    }
    Ok(())
}

/// Gram matrix of `k_v` over the rows of `x`, with jitter and spectral data.
pub fn build_gram(
    x: &DMatrix<f64>,
    group: &GroupIndex,
    kernels: &[CenteredKernel],
    policy: JitterPolicy,
) -> Result<GramBundle> {
    check_design(x, group, kernels)?;
    let per_coord = group
        .members()
        .iter()
        .map(|&a| kernels[a].gram(&column(x, a)))
        .collect::<Result<Vec<_>>>()?;
    let mut raw = per_coord[0].clone();
    for m in &per_coord[1..] {
        raw.component_mul_assign(m);
    }
    GramBundle::from_raw(group.clone(), raw, policy)
}

#[derive(Debug, Clone)]
pub struct OmegaBundle {
    pub group: GroupIndex,
    pub omega: DMatrix<f64>,
}

/// `(Omega_v)_{ij} = prod_{a in v} E_U[k0_a(U, x_ai) k0_a(U, x_aj)]` by quadrature.
pub fn build_omega(
    x: &DMatrix<f64>,
    group: &GroupIndex,
    kernels: &[CenteredKernel],
) -> Result<OmegaBundle> {
    check_design(x, group, kernels)?;
    let per_coord = group
        .members()
        .iter()
        .map(|&a| kernels[a].omega(&column(x, a)))
        .collect::<Result<Vec<_>>>()?;
    let mut omega = per_coord[0].clone();
    for m in &per_coord[1..] {
        omega.component_mul_assign(m);
    }
    Ok(OmegaBundle {
        group: group.clone(),
        omega,
    })
}

/// Omega matrices for several groups, computing each coordinate's factor once.
pub fn build_omegas(
    x: &DMatrix<f64>,
    groups: &[GroupIndex],
    kernels: &[CenteredKernel],
) -> Result<Vec<OmegaBundle>> {
    for g in groups {
        check_design(x, g, kernels)?;
    }
    let per_coord = (0..x.ncols())
        .into_par_iter()
        .map(|a| {
            if groups.iter().any(|g| g.contains(a)) {
                kernels[a].omega(&column(x, a))
            } else {
                Ok(DMatrix::zeros(0, 0))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(groups
        .iter()
        .map(|g| OmegaBundle {
            group: g.clone(),
            omega: hadamard_over(g, &per_coord),
        })
        .collect())
}

/// `sqrt((5/n) sum_k min(t^2, w_k))` over the normalized eigenvalues `w_k`.
pub fn q_hat(normalized_eigenvalues: &[f64], n: usize, t: f64) -> f64 {
    let t2 = t * t;
    let s: f64 = normalized_eigenvalues.iter().map(|&w| t2.min(w.max(0.0))).sum();
    (5.0 / n as f64 * s).sqrt()
}

/// Smallest `t > 0` with `q_hat(t) <= delta t^2`, where the `w_k` are the
/// eigenvalues of `K / n`.
pub fn estimate_nu_from_eigenvalues(normalized_eigenvalues: &[f64], n: usize, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::argument("Delta must be positive"));
    }
    if n == 0 {
        return Err(Error::argument("n must be positive"));
    }
    let w_max = normalized_eigenvalues.iter().cloned().fold(0.0, f64::max);
    if w_max <= 0.0 {
        return Ok(0.0);
    }
    let ok = |t: f64| q_hat(normalized_eigenvalues, n, t) <= delta * t * t;
    let mut hi = w_max.sqrt().max(1.0);
    while !ok(hi) {
        hi *= 2.0;
    }
    // q_hat(t) / t^2 is nonincreasing, so the feasible set is [nu, inf)
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(hi)
}

/// Empirical critical rate of a Gram bundle.
pub fn estimate_nu(bundle: &GramBundle, delta: f64) -> Result<f64> {
    let n = bundle.n();
    let w: Vec<f64> = bundle.eigenvalues.iter().map(|l| l / n as f64).collect();
    estimate_nu_from_eigenvalues(&w, n, delta)
}

/// Gram bundles for every candidate group over one design, built once and
/// shared by every fit on that design.
#[derive(Debug, Clone)]
pub struct GramSystem {
    bundles: Vec<GramBundle>,
}

impl GramSystem {
    pub fn build(
        x: &DMatrix<f64>,
        kernels: &KernelSet,
        groups: &[GroupIndex],
        policy: JitterPolicy,
    ) -> Result<Self> {
        if x.ncols() != kernels.dim() {
            return Err(Error::argument(format!(
                "design has {} columns but {} kernels",
                x.ncols(),
                kernels.dim()
            )));
        }
        if groups.is_empty() {
            return Err(Error::argument("no candidate groups"));
        }
        for g in groups {
            check_design(x, g, kernels.kernels())?;
        }
        let used: Vec<bool> = (0..x.ncols())
            .map(|a| groups.iter().any(|g| g.contains(a)))
            .collect();
        let per_coord = (0..x.ncols())
            .into_par_iter()
            .map(|a| {
                if used[a] {
                    kernels.get(a).gram(&column(x, a))
                } else {
                    Ok(DMatrix::zeros(0, 0))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let bundles = groups
            .par_iter()
            .map(|g| GramBundle::from_raw(g.clone(), hadamard_over(g, &per_coord), policy))
            .collect::<Result<Vec<_>>>()?;
        Ok(GramSystem { bundles })
    }

    pub fn bundles(&self) -> &[GramBundle] {
        &self.bundles
    }

    pub fn groups(&self) -> impl Iterator<Item = &GroupIndex> {
        self.bundles.iter().map(|b| &b.group)
    }

    pub fn position(&self, group: &GroupIndex) -> Option<usize> {
        self.bundles.iter().position(|b| &b.group == group)
    }

    pub fn n(&self) -> usize {
        self.bundles[0].n()
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }
}
