//! Deterministic property checks shared by the property tests and the
//! acceptance harness. Each returns a description of the first violation.

use std::collections::BTreeMap;
use std::sync::Arc;

use anova_rkhs::gram::{enumerate_groups, GramSystem, GroupIndex, JitterPolicy};
use anova_rkhs::io::to_json_string;
use anova_rkhs::kernel::{KernelFamily, KernelSet, MarginalDistribution};
use anova_rkhs::select::{compute_mu_max, proc_rdg, Metamodel, SelectionSettings};
use anova_rkhs::sensitivity::{model_omegas, sobol_report, variance_empirical, variance_quadratic};
use anova_rkhs::sim::{lhs_sample, run_benchmark, BenchmarkConfig, GFunction, KernelChoice, Triple};
use anova_rkhs::solver::{fit, zero_test, FitConfig, PenaltyWeights};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{grid_minimum3, normal_vec, rng, system, uniform_design, Problem};

pub type Check = Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

/// Raw Gram matrices are PSD and equal the Hadamard product of the univariate
/// centered Gram matrices; the stored square root reproduces the jittered matrix.
pub fn gram_structure(seed: u64, family: KernelFamily, n: usize, d: usize, dmax: usize) -> Check {
    let mut r = rng(seed);
    let x = uniform_design(&mut r, n, d);
    let ks = KernelSet::unit_uniform(family, d).map_err(|e| e.to_string())?;
    let groups = enumerate_groups(d, dmax).map_err(|e| e.to_string())?;
    let sys = GramSystem::build(&x, &ks, &groups, JitterPolicy::default()).map_err(|e| e.to_string())?;
    let univariate: Vec<DMatrix<f64>> = (0..d)
        .map(|a| ks.get(a).gram(&x.column(a).iter().copied().collect::<Vec<_>>()).unwrap())
        .collect();
    for b in sys.bundles() {
        let mut raw = b.k.clone();
        for i in 0..n {
            raw[(i, i)] -= b.jitter;
        }
        let mut product = DMatrix::from_element(n, n, 1.0);
        for &a in b.group.members() {
            product.component_mul_assign(&univariate[a]);
        }
        let scale = max_abs(&raw).max(1e-300);
        ensure(max_abs(&(&raw - &product)) <= 1e-12 * scale, || format!("group {}: Hadamard identity", b.group))?;
        let min_eig = SymmetricEigen::new(raw.clone()).eigenvalues.min();
        ensure(min_eig >= -1e-10 * raw.trace().max(1e-300), || format!("group {}: eigenvalue {min_eig:e}", b.group))?;
        let back = b.sqrt.transpose() * &b.sqrt;
        ensure(max_abs(&(back - &b.k)) <= 1e-8 * max_abs(&b.k).max(1.0), || format!("group {}: square root", b.group))?;
    }
    Ok(())
}

/// `E_U k0(x, U)` vanishes by quadrature at arbitrary points and at the nodes.
pub fn centering(family: KernelFamily, lo: f64, hi: f64, xs: &[f64]) -> Check {
    let marginal = MarginalDistribution::uniform(lo, hi, 256).map_err(|e| e.to_string())?;
    let ks = KernelSet::new(family, vec![marginal]).map_err(|e| e.to_string())?;
    let k = ks.get(0);
    for &x in xs.iter().chain(k.marginal().nodes()) {
        let res = k.centering_residual(x);
        ensure(res.abs() <= 1e-8, || format!("{family} on [{lo}, {hi}] at {x}: {res:e}"))?;
    }
    Ok(())
}

/// Objective traces of BCD fits never increase.
pub fn fit_descends(seed: u64, family: KernelFamily, n: usize, d: usize, scale: f64) -> Check {
    let mut r = rng(seed);
    let x = uniform_design(&mut r, n, d);
    let sys = system(&x, family, d.min(2));
    let y = normal_vec(&mut r, n);
    let mu_max = compute_mu_max(&y, sys.bundles(), &vec![1.0; sys.len()]).map_err(|e| e.to_string())?;
    let w = PenaltyWeights::constant(sys.len(), scale * mu_max, scale * mu_max / (n as f64).sqrt())
        .map_err(|e| e.to_string())?;
    let res = fit(&y, sys.bundles(), &w, &FitConfig::default(), None).map_err(|e| e.to_string())?;
    for pair in res.objective_trace.windows(2) {
        ensure(pair[1] <= pair[0] * (1.0 + 1e-12), || format!("objective rose from {} to {}", pair[0], pair[1]))?;
    }
    Ok(())
}

/// The fit at `mu_max` is empty and the fit just below it is not.
pub fn mu_max_brackets(seed: u64, family: KernelFamily, n: usize, d: usize) -> Check {
    let mut r = rng(seed);
    let x = uniform_design(&mut r, n, d);
    let sys = system(&x, family, d.min(2));
    let y = normal_vec(&mut r, n);
    let omega: Vec<f64> = (0..sys.len()).map(|_| r.random_range(0.5..2.0)).collect();
    let mu_max = compute_mu_max(&y, sys.bundles(), &omega).map_err(|e| e.to_string())?;
    let support = |scale: f64| {
        let w = PenaltyWeights::new(omega.iter().map(|o| scale * mu_max * o).collect(), vec![0.0; omega.len()]).unwrap();
        fit(&y, sys.bundles(), &w, &FitConfig::default(), None).map(|f| f.state.support().len())
    };
    let at = support(1.0).map_err(|e| e.to_string())?;
    let below = support(0.9).map_err(|e| e.to_string())?;
    ensure(at == 0 && below > 0, || format!("support sizes {at} at mu_max and {below} below"))
}

/// Sobol indices of a fitted model sum to one and aggregate exactly.
pub fn sobol_consistency(seed: u64, n: usize) -> Check {
    let spec = GFunction::new(vec![0.2, 0.6, 0.8]).unwrap();
    let data = Triple::simulate(&spec, n, 0.1, seed);
    let ks = Arc::new(KernelSet::unit_uniform(KernelFamily::Matern, 3).unwrap());
    let settings = SelectionSettings { dmax: Some(2), ..SelectionSettings::default() };
    let model = proc_rdg(&data.train, &data.test, ks, &settings).map_err(|e| e.to_string())?.model;
    let rep = sobol_report(&model).map_err(|e| e.to_string())?;
    let total: f64 = rep.indices.values().sum();
    ensure((total - 1.0).abs() <= 1e-10, || format!("indices sum to {total}"))?;
    ensure(rep.indices.values().all(|s| *s >= 0.0), || "negative index".into())?;
    for a in 0..3 {
        let direct: f64 = rep.indices.iter().filter(|(g, _)| g.contains(a)).map(|(_, s)| s).sum();
        ensure(rep.global_indices[a] == direct, || format!("G_{} mismatch", a + 1))?;
    }
    Ok(())
}

fn sample_design(ks: &KernelSet, m: usize, r: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(m, ks.dim());
    for i in 0..m {
        for a in 0..ks.dim() {
            x[(i, a)] = ks.get(a).marginal().sample(r);
        }
    }
    x
}

/// Model with random coefficients on every group of a two-input kernel set.
pub fn random_model(family: KernelFamily, seed: u64) -> Metamodel {
    let ks = Arc::new(KernelSet::unit_uniform(family, 2).unwrap());
    let mut r = rng(seed);
    let x = sample_design(&ks, 8, &mut r);
    let coef: BTreeMap<GroupIndex, DVector<f64>> =
        enumerate_groups(2, 2).unwrap().into_iter().map(|g| (g, normal_vec(&mut r, 8))).collect();
    Metamodel::new(0.1, coef, ks, Arc::new(x)).unwrap()
}

fn mean_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Univariate Omega entries agree with a Monte Carlo average within 5 standard errors.
pub fn omega_monte_carlo(family: KernelFamily, seed: u64, samples: usize) -> Check {
    let model = random_model(family, seed);
    let x = model.training_design();
    let mut r = rng(seed + 1);
    for a in 0..2 {
        let k = model.kernels().get(a);
        let xs: Vec<f64> = x.column(a).iter().copied().collect();
        let omega = k.omega(&xs).map_err(|e| e.to_string())?;
        let u: Vec<f64> = (0..samples).map(|_| k.marginal().sample(&mut r)).collect();
        let cross = k.cross_gram(&u, &xs).map_err(|e| e.to_string())?;
        for i in 0..xs.len() {
            for j in i..xs.len() {
                let prod: Vec<f64> = cross.column(i).iter().zip(cross.column(j).iter()).map(|(p, q)| p * q).collect();
                let (mc, se) = mean_se(&prod);
                ensure((omega[(i, j)] - mc).abs() <= 5.0 * se, || {
                    format!("{family} coordinate {a} entry ({i},{j}): {} vs {mc} (se {se:e})", omega[(i, j)])
                })?;
            }
        }
    }
    Ok(())
}

/// Quadratic-form and empirical variances agree within 5 standard errors.
pub fn variance_consistency(family: KernelFamily, seed: u64, m: usize) -> Check {
    let model = random_model(family, seed);
    let mut r = rng(seed + 2);
    let xe = sample_design(model.kernels(), m, &mut r);
    let quad = variance_quadratic(&model, &model_omegas(&model).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let emp = variance_empirical(&model, &xe).map_err(|e| e.to_string())?;
    for (g, f) in model.components(&xe).map_err(|e| e.to_string())? {
        let mean = f.mean();
        let sq: Vec<f64> = f.iter().map(|v| (v - mean).powi(2)).collect();
        let (_, se) = mean_se(&sq);
        let (q, e) = (quad.values[&g], emp.values[&g]);
        ensure((q - e).abs() <= 5.0 * se, || format!("{family} group {g}: {q} vs {e} (se {se:e})"))?;
    }
    Ok(())
}

/// Each LHS column has exactly one point per stratum.
pub fn lhs_strata(n: usize, d: usize, seed: u64) -> Check {
    let x = lhs_sample(n, d, seed);
    for a in 0..d {
        let mut seen = vec![false; n];
        for &v in x.column(a).iter() {
            ensure((0.0..1.0).contains(&v), || format!("value {v} outside [0, 1)"))?;
            let s = ((v * n as f64).floor() as usize).min(n - 1);
            ensure(!seen[s], || format!("column {a}: stratum {s} hit twice"))?;
            seen[s] = true;
        }
    }
    Ok(())
}

/// Two benchmark runs with the same master seed serialize identically.
pub fn pipeline_determinism(seed: u64) -> Check {
    let mut cfg = BenchmarkConfig::new(30, 0.1, KernelChoice::Matern, seed, 2);
    cfg.settings.dmax = Some(2);
    cfg.settings.grid.lmax = 4;
    let spec = GFunction::standard();
    let a = to_json_string(&run_benchmark(&spec, &cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    let b = to_json_string(&run_benchmark(&spec, &cfg).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(a == b, || "benchmark output differs between runs".into())
}

/// Random problem with `n = 5, d = 2, D_max = 2` and penalties around the
/// level where blocks switch off.
pub fn oracle_instance(seed: u64) -> (Problem, GramSystem) {
    let mut r = rng(seed);
    let x = uniform_design(&mut r, 5, 2);
    let sys = system(&x, KernelFamily::ALL[seed as usize % 3], 2);
    let y = normal_vec(&mut r, 5);
    let centered = y.add_scalar(-y.mean());
    let (mut mu, mut gamma) = (Vec::new(), Vec::new());
    for b in sys.bundles() {
        let s = 2.0 * (&b.sqrt * &centered).norm();
        mu.push(s * r.random_range(0.02..0.9));
        gamma.push(s * r.random_range(0.0..0.5));
    }
    let k = sys.bundles().iter().map(|b| b.k.clone()).collect();
    (Problem::new(y, k, mu, gamma), sys)
}

/// Relative gap between the default-configured fit and the oracle minimum.
pub fn solver_gap(seed: u64) -> Result<f64, String> {
    let (p, sys) = oracle_instance(seed);
    let w = PenaltyWeights::new(p.mu.clone(), p.gamma.clone()).map_err(|e| e.to_string())?;
    let res = fit(&p.y, sys.bundles(), &w, &FitConfig::default(), None).map_err(|e| e.to_string())?;
    let (best, _) = p.minimize();
    Ok((res.objective() - best).abs() / best)
}

/// Whether `zero_test` agrees with a grid scan on a random `n = 3` block;
/// returns the zero-test decision.
pub fn zero_test_matches_scan(seed: u64) -> Result<bool, String> {
    let mut r = rng(seed);
    let x = uniform_design(&mut r, 3, 1);
    let sys = system(&x, KernelFamily::ALL[seed as usize % 3], 1);
    let b = &sys.bundles()[0];
    let res = normal_vec(&mut r, 3);
    let mu = 2.0 * (&b.sqrt * &res).norm() * r.random_range(0.0..1.5);
    let gamma = 2.0 * res.norm() * r.random_range(0.0..0.6);
    let at_zero = res.norm_squared();
    let scanned = grid_minimum3(&res, &b.k, mu, gamma);
    let scan_zero = scanned >= at_zero - 1e-9 * at_zero;
    let is_zero = zero_test(&res, b, mu, gamma).map_err(|e| e.to_string())?;
    ensure(is_zero == scan_zero, || format!("zero test says {is_zero}, scan {scanned} vs {at_zero}"))?;
    Ok(is_zero)
}
