//! Univariate base kernels, their centering against a marginal distribution,
//! and the product ANOVA kernels built from them.
//!
//! A centered kernel `k0(x, x') = k(x, x') - m(x) m(x') / g` uses the marginal
//! mean `m(x) = E_U k(x, U)` and the grand mean `g = E_{U,V} k(U, V)`. Both are
//! evaluated with the marginal's quadrature table, so the quadrature estimate of
//! `E_U k0(x, U)` vanishes up to rounding for every `x`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre;

/// Default number of Gauss–Legendre nodes used to center kernels.
pub const DEFAULT_QUADRATURE_NODES: usize = 256;

/// Default sample count of the Monte Carlo fallback for sampler-only marginals.
pub const DEFAULT_MC_SAMPLES: usize = 100_000;

const SUPPORT_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    /// `1 + min(x, x')`
    Brownian,
    /// `(1 + 2|x - x'|) exp(-2|x - x'|)`
    Matern,
    /// `exp(-(x - x')^2)`
    Gaussian,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 3] = [
        KernelFamily::Brownian,
        KernelFamily::Matern,
        KernelFamily::Gaussian,
    ];

    /// Evaluates the kernel without a support check.
    #[inline]
    pub fn eval(self, x: f64, y: f64) -> f64 {
        match self {
            KernelFamily::Brownian => 1.0 + x.min(y),
            KernelFamily::Matern => {
                let r = 2.0 * (x - y).abs();
                (1.0 + r) * (-r).exp()
            }
            KernelFamily::Gaussian => {
                let r = x - y;
                (-r * r).exp()
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Brownian => "brownian",
            KernelFamily::Matern => "matern",
            KernelFamily::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "brownian" => Ok(KernelFamily::Brownian),
            "matern" => Ok(KernelFamily::Matern),
            "gaussian" => Ok(KernelFamily::Gaussian),
            other => Err(Error::argument(format!("unknown kernel family `{other}`"))),
        }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };

    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::argument(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo - SUPPORT_SLACK && x <= self.hi + SUPPORT_SLACK
    }

    pub fn check(&self, x: f64) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::Domain {
                value: x,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }
}

/// Evaluates `family` at `(x, y)` after checking both points against `support`.
pub fn eval_base_kernel(family: KernelFamily, support: Interval, x: f64, y: f64) -> Result<f64> {
    support.check(x)?;
    support.check(y)?;
    Ok(family.eval(x, y))
}

/// How a marginal was specified; kept so models can be serialized and rebuilt
/// bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MarginalSpec {
    /// Uniform on `[lo, hi]` integrated with an `nodes`-point Gauss–Legendre rule.
    Uniform { lo: f64, hi: f64, nodes: usize },
    /// Explicit quadrature table.
    Table {
        lo: f64,
        hi: f64,
        nodes: Vec<f64>,
        weights: Vec<f64>,
    },
}

/// Marginal distribution of one input coordinate, represented by a quadrature
/// table whose weights sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalDistribution {
    support: Interval,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    uniform: bool,
}

impl MarginalDistribution {
    pub fn uniform(lo: f64, hi: f64, n_nodes: usize) -> Result<Self> {
        let support = Interval::new(lo, hi)?;
        if n_nodes == 0 {
            return Err(Error::argument("quadrature needs at least one node"));
        }
        let (x, w) = gauss_legendre(n_nodes);
        let half = 0.5 * (hi - lo);
        let nodes = x.iter().map(|&z| lo + half * (z + 1.0)).collect();
        let weights = w.iter().map(|&w| 0.5 * w).collect();
        Ok(MarginalDistribution {
            support,
            nodes,
            weights,
            uniform: true,
        })
    }

    /// Uniform on `[0, 1]` with the default quadrature.
    pub fn unit_uniform() -> Self {
        Self::uniform(0.0, 1.0, DEFAULT_QUADRATURE_NODES).expect("valid default marginal")
    }

    /// Builds a marginal from a user-supplied node/weight table.
    pub fn from_table(lo: f64, hi: f64, nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let support = Interval::new(lo, hi)?;
        if nodes.is_empty() || nodes.len() != weights.len() {
            return Err(Error::argument(
                "quadrature table needs equally many (nonzero) nodes and weights",
            ));
        }
        for &x in &nodes {
            if !x.is_finite() {
                return Err(Error::argument("quadrature node is not finite"));
            }
            support.check(x)?;
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::argument("quadrature weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::argument(format!(
                "quadrature weights sum to {total}, expected 1"
            )));
        }
        Ok(MarginalDistribution {
            support,
            nodes,
            weights,
            uniform: false,
        })
    }

    /// Monte Carlo fallback for marginals known only through a sampler: draws
    /// `samples` points with a seeded generator and weights them equally.
    pub fn from_sampler<F>(lo: f64, hi: f64, samples: usize, seed: u64, mut sampler: F) -> Result<Self>
    where
        F: FnMut(&mut ChaCha8Rng) -> f64,
    {
        if samples == 0 {
            return Err(Error::argument("sampler marginal needs at least one sample"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes: Vec<f64> = (0..samples).map(|_| sampler(&mut rng)).collect();
        let w = 1.0 / samples as f64;
        let mut weights = vec![w; samples];
        // absorb the rounding of 1/samples so the weights sum to 1
        let drift = 1.0 - weights.iter().sum::<f64>();
        weights[0] += drift;
        Self::from_table(lo, hi, nodes, weights)
    }

    pub fn from_spec(spec: &MarginalSpec) -> Result<Self> {
        match spec {
            MarginalSpec::Uniform { lo, hi, nodes } => Self::uniform(*lo, *hi, *nodes),
            MarginalSpec::Table {
                lo,
                hi,
                nodes,
                weights,
            } => Self::from_table(*lo, *hi, nodes.clone(), weights.clone()),
        }
    }

    pub fn spec(&self) -> MarginalSpec {
        match self.uniform {
            true => MarginalSpec::Uniform {
                lo: self.support.lo,
                hi: self.support.hi,
                nodes: self.nodes.len(),
            },
            false => MarginalSpec::Table {
                lo: self.support.lo,
                hi: self.support.hi,
                nodes: self.nodes.clone(),
                weights: self.weights.clone(),
            },
        }
    }

    pub fn support(&self) -> Interval {
        self.support
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Quadrature estimate of `E f(U)`.
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&u, &w)| w * f(u))
            .sum()
    }

    /// Draws one point from the marginal: uniform on the support for the
    /// built-in uniform, otherwise from the discrete quadrature table.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.uniform {
            let Interval { lo, hi } = self.support;
            return lo + (hi - lo) * rng.random::<f64>();
        }
        let mut u: f64 = rng.random();
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            if u < *w {
                return *x;
            }
            u -= w;
        }
        *self.nodes.last().expect("nonempty table")
    }
}

/// Base kernel centered against a marginal distribution.
#[derive(Debug, Clone)]
pub struct CenteredKernel {
    family: KernelFamily,
    marginal: MarginalDistribution,
    node_means: Vec<f64>,
    grand_mean: f64,
}

/// Builds the centered kernel of `base` with respect to `marginal`.
pub fn center_kernel(base: KernelFamily, marginal: MarginalDistribution) -> Result<CenteredKernel> {
    if base == KernelFamily::Brownian && marginal.support.lo < -1.0 {
        return Err(Error::argument(format!(
            "brownian kernel 1 + min(x, x') is positive semidefinite only on [-1, inf); support starts at {}",
            marginal.support.lo
        )));
    }
    let node_means: Vec<f64> = marginal
        .nodes
        .iter()
        .map(|&x| marginal.expect(|u| base.eval(x, u)))
        .collect();
    let grand_mean: f64 = node_means
        .iter()
        .zip(&marginal.weights)
        .map(|(m, w)| m * w)
        .sum();
    if !(grand_mean > 0.0) {
        return Err(Error::Degenerate(format!(
            "{base} kernel has nonpositive grand mean {grand_mean} under the marginal"
        )));
    }
    Ok(CenteredKernel {
        family: base,
        marginal,
        node_means,
        grand_mean,
    })
}

impl CenteredKernel {
    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn marginal(&self) -> &MarginalDistribution {
        &self.marginal
    }

    pub fn grand_mean(&self) -> f64 {
        self.grand_mean
    }

    /// `E_U k(x_node, U)` at each quadrature node.
    pub fn node_means(&self) -> &[f64] {
        &self.node_means
    }

    /// `E_U k(x, U)` by quadrature.
    pub fn mean_at(&self, x: f64) -> f64 {
        self.marginal.expect(|u| self.family.eval(x, u))
    }

    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        let s = self.marginal.support;
        s.check(x)?;
        s.check(y)?;
        Ok(self.eval_unchecked(x, y))
    }

    pub fn eval_unchecked(&self, x: f64, y: f64) -> f64 {
        self.family.eval(x, y) - self.mean_at(x) * self.mean_at(y) / self.grand_mean
    }

    /// Quadrature estimate of `E_U k0(x, U)`; zero up to rounding.
    pub fn centering_residual(&self, x: f64) -> f64 {
        let mx = self.mean_at(x);
        self.marginal
            .nodes
            .iter()
            .zip(&self.marginal.weights)
            .zip(&self.node_means)
            .map(|((&u, &w), &mu)| w * (self.family.eval(x, u) - mx * mu / self.grand_mean))
            .sum()
    }

    fn check_all(&self, xs: &[f64]) -> Result<()> {
        xs.iter().try_for_each(|&x| self.marginal.support.check(x))
    }

    /// Centered Gram matrix over `xs`.
    pub fn gram(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        self.cross_gram(xs, xs)
    }

    /// Centered cross-Gram matrix with entries `k0(rows[i], cols[j])`.
    pub fn cross_gram(&self, rows: &[f64], cols: &[f64]) -> Result<DMatrix<f64>> {
        self.check_all(rows)?;
        self.check_all(cols)?;
        let mr: Vec<f64> = rows.iter().map(|&x| self.mean_at(x)).collect();
        let mc: Vec<f64> = if std::ptr::eq(rows, cols) {
            mr.clone()
        } else {
            cols.iter().map(|&x| self.mean_at(x)).collect()
        };
        let g = self.grand_mean;
        Ok(DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
            self.family.eval(rows[i], cols[j]) - mr[i] * mc[j] / g
        }))
    }

    /// Matrix of `E_U [k0(U, x_i) k0(U, x_j)]` over `xs`, by quadrature.
    pub fn omega(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        self.check_all(xs)?;
        let g = self.grand_mean;
        let mx: Vec<f64> = xs.iter().map(|&x| self.mean_at(x)).collect();
        let q = self.marginal.nodes.len();
        // rows scaled by sqrt(w) so that omega = B^T B
        let b = DMatrix::from_fn(q, xs.len(), |j, i| {
            let u = self.marginal.nodes[j];
            self.marginal.weights[j].sqrt()
                * (self.family.eval(u, xs[i]) - self.node_means[j] * mx[i] / g)
        });
        let mut omega = b.tr_mul(&b);
        symmetrize(&mut omega);
        Ok(omega)
    }
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// Evaluates `k_v(x_v, y_v) = prod_{a in v} k0_a(x_a, y_a)`. Points are full
/// `d`-dimensional; only the coordinates in `members` are read.
pub fn eval_anova_kernel(
    centered: &[CenteredKernel],
    members: &[usize],
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::argument(
            "ANOVA kernel needs a nonempty variable subset",
        ));
    }
    let mut prod = 1.0;
    for &a in members {
        let k = centered
            .get(a)
            .ok_or_else(|| Error::argument(format!("no kernel for coordinate {}", a + 1)))?;
        let (xa, ya) = match (x.get(a), y.get(a)) {
            (Some(xa), Some(ya)) => (*xa, *ya),
            _ => return Err(Error::argument("point has too few coordinates")),
        };
        prod *= k.eval(xa, ya)?;
    }
    Ok(prod)
}

/// One centered kernel per input coordinate, all from the same family.
#[derive(Debug, Clone)]
pub struct KernelSet {
    family: KernelFamily,
    kernels: Vec<CenteredKernel>,
}

impl KernelSet {
    pub fn new(family: KernelFamily, marginals: Vec<MarginalDistribution>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::argument("kernel set needs at least one coordinate"));
        }
        let kernels = marginals
            .into_iter()
            .map(|m| center_kernel(family, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(KernelSet { family, kernels })
    }

    /// `d` coordinates, each uniform on `[0, 1]`.
    pub fn unit_uniform(family: KernelFamily, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::argument("kernel set needs at least one coordinate"));
        }
        let k = center_kernel(family, MarginalDistribution::unit_uniform())?;
        Ok(KernelSet {
            family,
            kernels: vec![k; d],
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn dim(&self) -> usize {
        self.kernels.len()
    }

    pub fn kernels(&self) -> &[CenteredKernel] {
        &self.kernels
    }

    pub fn get(&self, a: usize) -> &CenteredKernel {
        &self.kernels[a]
    }

    pub fn marginal_specs(&self) -> Vec<MarginalSpec> {
        self.kernels.iter().map(|k| k.marginal.spec()).collect()
    }

    /// `m` independent draws from the product of the marginals, one per row.
    pub fn sample_design(&self, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::zeros(m, self.dim());
        for i in 0..m {
            for (a, k) in self.kernels.iter().enumerate() {
                x[(i, a)] = k.marginal.sample(&mut rng);
            }
        }
        x
    }
}
