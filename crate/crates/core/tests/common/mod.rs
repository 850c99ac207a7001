#![allow(dead_code)]

use anova_rkhs::gram::{enumerate_groups, GramSystem, JitterPolicy};
use anova_rkhs::kernel::{KernelFamily, KernelSet};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_design(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| rng.random::<f64>())
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal))
}

pub fn system(x: &DMatrix<f64>, family: KernelFamily, dmax: usize) -> GramSystem {
    let ks = KernelSet::unit_uniform(family, x.ncols()).unwrap();
    let groups = enumerate_groups(x.ncols(), dmax).unwrap();
    GramSystem::build(x, &ks, &groups, JitterPolicy::default()).unwrap()
}

/// Penalized least-squares problem
/// `||y - f0 - sum K_v theta_v||^2 + sum gamma_v ||K_v theta_v|| + mu_v sqrt(theta_v^T K_v theta_v)`.
pub struct Problem {
    pub y: DVector<f64>,
    pub k: Vec<DMatrix<f64>>,
    pub mu: Vec<f64>,
    pub gamma: Vec<f64>,
    /// When false the intercept is pinned at 0.
    pub free_intercept: bool,
}

impl Problem {
    pub fn new(y: DVector<f64>, k: Vec<DMatrix<f64>>, mu: Vec<f64>, gamma: Vec<f64>) -> Self {
        Problem { y, k, mu, gamma, free_intercept: true }
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn dim(&self) -> usize {
        1 + self.k.len() * self.n()
    }

    fn block<'a>(&self, z: &'a DVector<f64>, v: usize) -> nalgebra::DVectorView<'a, f64> {
        z.rows(1 + v * self.n(), self.n())
    }

    fn residual(&self, z: &DVector<f64>) -> DVector<f64> {
        let mut r = self.y.add_scalar(-z[0]);
        for (v, k) in self.k.iter().enumerate() {
            r -= k * self.block(z, v);
        }
        r
    }

    /// The criterion with norms replaced by `sqrt(||.||^2 + eps^2)` (`eps = 0` is exact).
    pub fn value(&self, z: &DVector<f64>, eps: f64) -> f64 {
        let mut total = self.residual(z).norm_squared();
        for (v, k) in self.k.iter().enumerate() {
            let t = self.block(z, v);
            let kt = k * t;
            total += self.gamma[v] * (kt.norm_squared() + eps * eps).sqrt();
            total += self.mu[v] * (t.dot(&kt).max(0.0) + eps * eps).sqrt();
        }
        total
    }

    fn gradient_hessian(&self, z: &DVector<f64>, eps: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.n();
        let m = self.dim();
        let mut jac = DMatrix::zeros(n, m);
        jac.column_mut(0).fill(1.0);
        for (v, k) in self.k.iter().enumerate() {
            jac.view_mut((0, 1 + v * n), (n, n)).copy_from(k);
        }
        let r = self.residual(z);
        let mut g = -2.0 * jac.transpose() * &r;
        let mut h = 2.0 * jac.transpose() * &jac;
        for (v, k) in self.k.iter().enumerate() {
            let t = self.block(z, v).into_owned();
            let off = 1 + v * n;
            for (a, w) in [(k * k, self.gamma[v]), (k.clone(), self.mu[v])] {
                if w == 0.0 {
                    continue;
                }
                let at = &a * &t;
                let s = (t.dot(&at).max(0.0) + eps * eps).sqrt();
                let mut gb = g.rows_mut(off, n);
                gb += &at * (w / s);
                let hb = &a * (w / s) - &at * at.transpose() * (w / (s * s * s));
                let mut view = h.view_mut((off, off), (n, n));
                view += hb;
            }
        }
        (g, h)
    }

    /// Damped Newton on the smoothed criterion with decreasing smoothing.
    pub fn minimize(&self) -> (f64, DVector<f64>) {
        let m = self.dim();
        let mut z = DVector::zeros(m);
        if self.free_intercept {
            z[0] = self.y.mean();
        }
        let mut eps = 1e-1;
        while eps >= 1e-13 {
            for _ in 0..500 {
                let (mut g, mut h) = self.gradient_hessian(&z, eps);
                if !self.free_intercept {
                    g[0] = 0.0;
                    h.row_mut(0).fill(0.0);
                    h.column_mut(0).fill(0.0);
                    h[(0, 0)] = 1.0;
                }
                let f = self.value(&z, eps);
                let mut tau = 1e-14 * h.diagonal().amax().max(1.0);
                let step = loop {
                    let mut hd = h.clone();
                    for i in 0..m {
                        hd[(i, i)] += tau;
                    }
                    if let Some(c) = hd.cholesky() {
                        break c.solve(&(-&g));
                    }
                    tau *= 10.0;
                };
                let mut t = 1.0;
                let mut moved = false;
                while t > 1e-20 {
                    let cand = &z + &step * t;
                    if self.value(&cand, eps) < f - 1e-4 * t * (-g.dot(&step)).max(0.0) {
                        z = cand;
                        moved = true;
                        break;
                    }
                    t *= 0.5;
                }
                if !moved || step.norm() * t < 1e-15 * z.norm().max(1.0) {
                    break;
                }
            }
            eps *= 0.1;
        }
        (self.value(&z, 0.0), z)
    }
}

/// Dense solve of the stacked ridge normal equations in `(f0, theta_1, ..., theta_s)` for
/// `||y - f0 - sum K_v theta_v||^2 + lambda n sum theta_v^T K_v theta_v`.
pub fn ridge_oracle(y: &DVector<f64>, k: &[DMatrix<f64>], lambda: f64) -> (f64, Vec<DVector<f64>>) {
    let n = y.len();
    let m = 1 + k.len() * n;
    let mut jac = DMatrix::zeros(n, m);
    jac.column_mut(0).fill(1.0);
    let mut pen = DMatrix::zeros(m, m);
    for (v, kv) in k.iter().enumerate() {
        jac.view_mut((0, 1 + v * n), (n, n)).copy_from(kv);
        pen.view_mut((1 + v * n, 1 + v * n), (n, n)).copy_from(&(kv * (lambda * n as f64)));
    }
    let a = jac.transpose() * &jac + pen;
    let b = jac.transpose() * y;
    let z = a.lu().solve(&b).expect("stacked ridge system is nonsingular");
    let theta = (0..k.len()).map(|v| z.rows(1 + v * n, n).into_owned()).collect();
    (z[0], theta)
}

pub mod checks;

/// Scans `||r - u||^2 + gamma ||u|| + mu ||K^{-1/2} u||` over fitted values `u = K theta`
/// in three dimensions, on a grid repeatedly refined around its best point.
pub fn grid_minimum3(r: &DVector<f64>, k: &DMatrix<f64>, mu: f64, gamma: f64) -> f64 {
    assert_eq!(r.len(), 3);
    // Along u = t d with |d| = 1 the objective is |r|^2 - 2t<c, d> + t^2 + t (gamma + mu |d|_{K^-1}),
    // minimized in closed form; the scan runs over directions in the sign orthant of c.
    let eig = SymmetricEigen::new(k.clone());
    let c = eig.eigenvectors.transpose() * r;
    let lam = eig.eigenvalues;
    let sign: Vec<f64> = c.iter().map(|v| if *v < 0.0 { -1.0 } else { 1.0 }).collect();
    let at_zero = r.norm_squared();
    let along = |phi: f64, psi: f64| {
        let d = [phi.cos(), phi.sin() * psi.cos(), phi.sin() * psi.sin()];
        let mut inner = 0.0;
        let mut scaled = 0.0;
        for i in 0..3 {
            inner += sign[i] * d[i] * c[i];
            scaled += d[i] * d[i] / lam[i];
        }
        let t = (inner - 0.5 * (gamma + mu * scaled.sqrt())).max(0.0);
        at_zero - t * t
    };
    let steps = 200;
    let right = std::f64::consts::FRAC_PI_2;
    let mut center = [0.5 * right; 2];
    let mut half = 0.5 * right;
    let mut best = at_zero;
    for _ in 0..25 {
        let axis = |ctr: f64| {
            (0..=steps)
                .map(|s| (ctr - half + 2.0 * half * s as f64 / steps as f64).clamp(0.0, right))
                .collect::<Vec<_>>()
        };
        let (g0, g1) = (axis(center[0]), axis(center[1]));
        let mut best_here = (f64::INFINITY, center);
        for &phi in &g0 {
            for &psi in &g1 {
                let v = along(phi, psi);
                if v < best_here.0 {
                    best_here = (v, [phi, psi]);
                }
            }
        }
        best = best.min(best_here.0);
        center = best_here.1;
        half *= 0.3;
    }
    best
}
