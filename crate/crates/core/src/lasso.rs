//! Weighted Lasso in covariance form.
//!
//! Minimizes `F(t) = tᵀGt - 2tᵀb + α Σ_j ν_j |t_j|` by cyclic coordinate
//! descent. Once the active set settles, the stationarity system on the
//! support is solved directly and the result kept if its signs and the KKT
//! conditions check out.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::csv_to_file;

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    /// Bound on the largest coordinate change in a sweep, and on the scaled KKT residual.
    pub tol: f64,
    /// Maximum number of coordinate sweeps.
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol: 1e-9,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub theta: DVector<f64>,
    pub alpha: f64,
    pub support: Vec<usize>,
    pub kkt_residual: f64,
    /// Residual bound that `converged` certifies.
    pub kkt_tolerance: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl LassoFit {
    fn new(
        theta: DVector<f64>,
        alpha: f64,
        kkt_residual: f64,
        kkt_tolerance: f64,
        iterations: usize,
    ) -> Self {
        let support = support_of(&theta);
        LassoFit {
            theta,
            alpha,
            support,
            kkt_residual,
            kkt_tolerance,
            iterations,
            converged: kkt_residual <= kkt_tolerance,
        }
    }

    pub fn sparsity(&self) -> usize {
        self.support.len()
    }
}

pub fn support_of(theta: &DVector<f64>) -> Vec<usize> {
    theta
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0.0)
        .map(|(j, _)| j)
        .collect()
}

fn soft(x: f64, thr: f64) -> f64 {
    if x > thr {
        x - thr
    } else if x < -thr {
        x + thr
    } else {
        0.0
    }
}

fn check_dims(gram: &DMatrix<f64>, b: &DVector<f64>, nu: &DVector<f64>) -> Result<()> {
    let p = b.len();
    if gram.shape() != (p, p) || nu.len() != p {
        return Err(Error::invalid(format!(
            "Gram is {}x{}, b has length {}, weights {}",
            gram.nrows(),
            gram.ncols(),
            p,
            nu.len()
        )));
    }
    Ok(())
}

/// `F(t) = tᵀGt - 2tᵀb + α Σ ν_j |t_j|`.
pub fn objective(gram: &DMatrix<f64>, b: &DVector<f64>, nu: &DVector<f64>, alpha: f64, t: &DVector<f64>) -> f64 {
    let quad = (gram * t).dot(t);
    let pen: f64 = nu.iter().zip(t.iter()).map(|(w, v)| w * v.abs()).sum();
    quad - 2.0 * t.dot(b) + alpha * pen
}

/// Smallest `α` at which `θ = 0` is optimal: `max_j 2|b_j| / ν_j`.
pub fn alpha_max(b: &DVector<f64>, nu: &DVector<f64>) -> f64 {
    alpha_max_index(b, nu).map(|(_, a)| a).unwrap_or(0.0)
}

/// Maximizing coordinate of `2|b_j| / ν_j` (smallest index on ties) and the value.
pub fn alpha_max_index(b: &DVector<f64>, nu: &DVector<f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, (bj, wj)) in b.iter().zip(nu.iter()).enumerate() {
        let v = 2.0 * bj.abs() / wj;
        if best.is_none_or(|(_, a)| v > a) {
            best = Some((j, v));
        }
    }
    best
}

/// Largest violation of the weighted-Lasso stationarity conditions at `theta`.
pub fn kkt_residual(
    theta: &DVector<f64>,
    gram: &DMatrix<f64>,
    b: &DVector<f64>,
    nu: &DVector<f64>,
    alpha: f64,
) -> f64 {
    let grad = (gram * theta - b) * 2.0;
    theta
        .iter()
        .zip(grad.iter())
        .zip(nu.iter())
        .map(|((&t, &g), &w)| {
            if t != 0.0 {
                (g + alpha * w * t.signum()).abs()
            } else {
                (g.abs() - alpha * w).max(0.0)
            }
        })
        .fold(0.0, f64::max)
}

fn kkt_target(b: &DVector<f64>, tol: f64) -> f64 {
    tol * b.amax().max(1.0)
}

/// Solves `G_AA t_A = b_A - (α/2) ν_A ∘ sign_A` on the current support and
/// returns it if the signs are reproduced and the KKT residual is within `target`.
fn polish(
    theta: &DVector<f64>,
    gram: &DMatrix<f64>,
    b: &DVector<f64>,
    nu: &DVector<f64>,
    alpha: f64,
    target: f64,
) -> Option<(DVector<f64>, f64)> {
    let support = support_of(theta);
    if support.is_empty() {
        let r = kkt_residual(theta, gram, b, nu, alpha);
        return (r <= target).then(|| (theta.clone(), r));
    }
    let k = support.len();
    let sub = DMatrix::from_fn(k, k, |r, c| gram[(support[r], support[c])]);
    let rhs = DVector::from_fn(k, |r, _| {
        let j = support[r];
        b[j] - 0.5 * alpha * nu[j] * theta[j].signum()
    });
    let sol = sub.cholesky()?.solve(&rhs);
    let mut out = DVector::zeros(theta.len());
    for (r, &j) in support.iter().enumerate() {
        if sol[r] == 0.0 || sol[r].signum() != theta[j].signum() {
            return None;
        }
        out[j] = sol[r];
    }
    let resid = kkt_residual(&out, gram, b, nu, alpha);
    (resid <= target).then_some((out, resid))
}

/// One cyclic pass over `coords`. `c` holds `b - G t` and is kept in sync.
/// Returns the largest absolute coordinate change.
fn sweep(
    coords: impl Iterator<Item = usize>,
    theta: &mut DVector<f64>,
    c: &mut DVector<f64>,
    gram: &DMatrix<f64>,
    nu: &DVector<f64>,
    alpha: f64,
) -> f64 {
    let mut max_change: f64 = 0.0;
    for j in coords {
        let gjj = gram[(j, j)];
        let old = theta[j];
        let rho = c[j] + gjj * old;
        let new = soft(rho, 0.5 * alpha * nu[j]) / gjj;
        let delta = new - old;
        if delta != 0.0 {
            theta[j] = new;
            c.axpy(-delta, &gram.column(j), 1.0);
            max_change = max_change.max(delta.abs());
        }
    }
    max_change
}

pub fn weighted_lasso(
    gram: &DMatrix<f64>,
    b: &DVector<f64>,
    nu: &DVector<f64>,
    alpha: f64,
    init: &DVector<f64>,
    opts: SolverOptions,
) -> Result<LassoFit> {
    check_dims(gram, b, nu)?;
    let p = b.len();
    if init.len() != p {
        return Err(Error::invalid(format!("initial point has length {}, expected {p}", init.len())));
    }
    if !(alpha >= 0.0) {
        return Err(Error::invalid(format!("alpha must be nonnegative, got {alpha}")));
    }
    if let Some(index) = (0..p).find(|&j| !(gram[(j, j)] > 0.0)) {
        return Err(Error::DegenerateAtom { index });
    }
    if let Some(j) = nu.iter().position(|&w| !(w >= 0.0)) {
        return Err(Error::invalid(format!("weight {j} is negative")));
    }

    let target = kkt_target(b, opts.tol);
    let mut theta = init.clone();
    let mut c = b - gram * &theta;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let change = sweep(0..p, &mut theta, &mut c, gram, nu, alpha);
        iterations += 1;
        if change <= opts.tol {
            let resid = kkt_residual(&theta, gram, b, nu, alpha);
            if resid <= target {
                return Ok(LassoFit::new(theta, alpha, resid, target, iterations));
            }
            if let Some((t, r)) = polish(&theta, gram, b, nu, alpha, target) {
                return Ok(LassoFit::new(t, alpha, r, target, iterations));
            }
        }
        // iterate on the active set until it stalls, then re-check everything
        let active = support_of(&theta);
        if active.is_empty() {
            continue;
        }
        while iterations < opts.max_iter {
            let change = sweep(active.iter().copied(), &mut theta, &mut c, gram, nu, alpha);
            iterations += 1;
            if change <= opts.tol {
                break;
            }
            if iterations % 64 == 0 && support_of(&theta) == active {
                if let Some((t, r)) = polish(&theta, gram, b, nu, alpha, target) {
                    return Ok(LassoFit::new(t, alpha, r, target, iterations));
                }
            }
        }
        if let Some((t, r)) = polish(&theta, gram, b, nu, alpha, target) {
            return Ok(LassoFit::new(t, alpha, r, target, iterations));
        }
        // drop coordinates that the active sweeps zeroed out
        c = b - gram * &theta;
    }
    let resid = kkt_residual(&theta, gram, b, nu, alpha);
    Ok(LassoFit::new(theta, alpha, resid, target, iterations))
}

#[derive(Debug, Clone)]
pub struct LassoPath {
    /// Strictly decreasing; `alphas[0] == alpha_max`.
    pub alphas: Vec<f64>,
    pub fits: Vec<LassoFit>,
    pub alpha_max: f64,
}

impl LassoPath {
    pub fn len(&self) -> usize {
        self.fits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fits.is_empty()
    }

    /// Writes `alpha, support_size, kkt_residual, objective`, optionally followed
    /// by one `theta_j` column per coefficient.
    pub fn write_csv(
        &self,
        path: impl AsRef<Path>,
        gram: &DMatrix<f64>,
        b: &DVector<f64>,
        nu: &DVector<f64>,
        coefficients: bool,
    ) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_to_file(path, e))?;
        let p = b.len();
        let mut header: Vec<String> = ["alpha", "support_size", "kkt_residual", "objective"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        if coefficients {
            header.extend((0..p).map(|j| format!("theta_{j}")));
        }
        w.write_record(&header)?;
        for fit in &self.fits {
            let mut row = vec![
                fit.alpha.to_string(),
                fit.sparsity().to_string(),
                fit.kkt_residual.to_string(),
                objective(gram, b, nu, fit.alpha, &fit.theta).to_string(),
            ];
            if coefficients {
                row.extend(fit.theta.iter().map(|v| v.to_string()));
            }
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::file(path, e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Start {
    /// Each fit starts from the previous solution.
    #[default]
    Warm,
    /// Each fit starts from zero; fits are independent of each other.
    Cold,
}

/// Fits on the grid `α_k = α_max k / N`, traversed from `k = N` down to `k = 1`.
pub fn lasso_path(
    gram: &DMatrix<f64>,
    b: &DVector<f64>,
    nu: &DVector<f64>,
    grid_size: usize,
    opts: SolverOptions,
    start: Start,
) -> Result<LassoPath> {
    check_dims(gram, b, nu)?;
    if grid_size < 2 {
        return Err(Error::invalid(format!("path needs at least 2 grid points, got {grid_size}")));
    }
    let amax = alpha_max(b, nu);
    if !(amax > 0.0) || !amax.is_finite() {
        return Err(Error::invalid("alpha_max is zero: the data are uncorrelated with every atom"));
    }
    let alphas: Vec<f64> = (1..=grid_size)
        .rev()
        .map(|k| amax * k as f64 / grid_size as f64)
        .collect();
    let mut fits = Vec::with_capacity(grid_size);
    let mut init = DVector::zeros(b.len());
    for &alpha in &alphas {
        let fit = weighted_lasso(gram, b, nu, alpha, &init, opts)?;
        if start == Start::Warm {
            init = fit.theta.clone();
        }
        fits.push(fit);
    }
    Ok(LassoPath {
        alphas,
        fits,
        alpha_max: amax,
    })
}

#[derive(Debug, Clone)]
pub struct RestrictedFit {
    pub fit: LassoFit,
    pub index: usize,
    /// True when only the empty fit at `alpha_max` satisfies the cardinality bound.
    pub fallback: bool,
}

/// The path fit with the smallest `α` whose support has at most `s` atoms.
pub fn cardinality_restricted_fit(path: &LassoPath, s: usize) -> Result<RestrictedFit> {
    if path.is_empty() {
        return Err(Error::invalid("empty path"));
    }
    let index = (0..path.len())
        .rev()
        .find(|&k| path.fits[k].sparsity() <= s)
        .unwrap_or(0);
    Ok(RestrictedFit {
        fit: path.fits[index].clone(),
        index,
        fallback: index == 0 && s > 0 && path.len() > 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random_instance(p: usize, n: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let mut s = rng::stream(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng::standard_normal(&mut s));
        let y = DVector::from_fn(n, |_, _| rng::standard_normal(&mut s));
        let nu = DVector::from_fn(p, |_, _| s.random_range(0.5..2.0));
        (x.tr_mul(&x), x.tr_mul(&y), nu)
    }

    #[test]
    fn unpenalized_orthonormal_case() {
        let b = DVector::from_vec(vec![0.3, -1.2, 2.0, 0.0]);
        let nu = DVector::from_element(4, 1.0);
        let fit = weighted_lasso(&DMatrix::identity(4, 4), &b, &nu, 0.0, &DVector::zeros(4), SolverOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.theta - &b).amax() < 1e-15);
    }

    #[test]
    fn orthonormal_soft_threshold() {
        let b = DVector::from_vec(vec![0.3, -1.2, 2.0, 0.05, -0.4]);
        let nu = DVector::from_element(5, 1.0);
        let alpha = 0.7;
        let fit = weighted_lasso(&DMatrix::identity(5, 5), &b, &nu, alpha, &DVector::zeros(5), SolverOptions::default()).unwrap();
        for j in 0..5 {
            assert_relative_eq!(fit.theta[j], soft(b[j], alpha / 2.0), epsilon = 1e-14);
        }
        assert!(kkt_residual(&fit.theta, &DMatrix::identity(5, 5), &b, &nu, alpha) <= 1e-12);
        assert_eq!(fit.support, vec![1, 2, 4]);
    }

    #[test]
    fn alpha_max_examples() {
        assert_eq!(alpha_max(&DVector::zeros(3), &DVector::from_element(3, 1.0)), 0.0);
        let b = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let nu = DVector::from_vec(vec![2.0, 1.0, 1.0]);
        assert_eq!(alpha_max(&b, &nu), 1.0);
        let g = DMatrix::identity(3, 3);
        let opts = SolverOptions::default();
        let at = weighted_lasso(&g, &b, &nu, 1.0, &DVector::zeros(3), opts).unwrap();
        assert!(at.support.is_empty());
        let below = weighted_lasso(&g, &b, &nu, 0.99, &DVector::zeros(3), opts).unwrap();
        assert_eq!(below.support, vec![0]);
        // ties resolve to the smallest index
        let tie = DVector::from_vec(vec![0.5, -1.0, 1.0]);
        assert_eq!(alpha_max_index(&tie, &DVector::from_element(3, 1.0)), Some((1, 2.0)));
    }

    #[test]
    fn alpha_max_empties_random_instance() {
        let (g, b, nu) = random_instance(15, 20, 3);
        let amax = alpha_max(&b, &nu);
        let fit = weighted_lasso(&g, &b, &nu, amax, &DVector::zeros(15), SolverOptions::default()).unwrap();
        assert!(fit.support.is_empty());
        assert_eq!(kkt_residual(&DVector::zeros(15), &g, &b, &nu, amax), 0.0);
        assert_eq!(kkt_residual(&DVector::zeros(15), &g, &b, &nu, 2.0 * amax), 0.0);
    }

    #[test]
    fn kkt_linear_response() {
        let b = DVector::from_vec(vec![2.0, 0.1, -3.0]);
        let nu = DVector::from_element(3, 1.0);
        let g = DMatrix::identity(3, 3);
        let alpha = 1.0;
        let mut theta = b.map(|v| soft(v, alpha / 2.0));
        assert!(kkt_residual(&theta, &g, &b, &nu, alpha) <= 1e-12);
        theta[0] += 1e-3;
        assert_relative_eq!(kkt_residual(&theta, &g, &b, &nu, alpha), 2e-3, epsilon = 1e-12);
    }

    #[test]
    fn local_optimality_against_perturbations() {
        let (g, b, nu) = random_instance(12, 12, 21);
        let alpha = 0.2 * alpha_max(&b, &nu);
        let fit = weighted_lasso(&g, &b, &nu, alpha, &DVector::zeros(12), SolverOptions::default()).unwrap();
        assert!(fit.converged);
        let f0 = objective(&g, &b, &nu, alpha, &fit.theta);
        let mut s = rng::stream(77);
        for i in 0..100_000 {
            let scale = 10f64.powi(-(i % 6) as i32);
            let t = DVector::from_fn(12, |j, _| fit.theta[j] + scale * s.random_range(-1.0..1.0));
            assert!(f0 <= objective(&g, &b, &nu, alpha, &t) + 1e-6);
        }
    }

    #[test]
    fn zero_diagonal_is_degenerate() {
        let mut g = DMatrix::identity(3, 3);
        g[(1, 1)] = 0.0;
        let r = weighted_lasso(&g, &DVector::zeros(3), &DVector::from_element(3, 1.0), 1.0, &DVector::zeros(3), SolverOptions::default());
        assert!(matches!(r, Err(Error::DegenerateAtom { index: 1 })));
    }

    #[test]
    fn non_convergence_is_reported_not_raised() {
        let (g, b, nu) = random_instance(10, 6, 4);
        let opts = SolverOptions { tol: 1e-14, max_iter: 1 };
        let fit = weighted_lasso(&g, &b, &nu, 0.01 * alpha_max(&b, &nu), &DVector::zeros(10), opts).unwrap();
        assert_eq!(fit.iterations, 1);
        assert!(!fit.converged);
    }

    #[test]
    fn sweeps_never_increase_objective() {
        let (g, b, nu) = random_instance(20, 15, 8);
        let alpha = 0.05 * alpha_max(&b, &nu);
        let mut prev = f64::INFINITY;
        for k in 1..40 {
            let opts = SolverOptions { tol: 0.0, max_iter: k };
            let fit = weighted_lasso(&g, &b, &nu, alpha, &DVector::zeros(20), opts).unwrap();
            let f = objective(&g, &b, &nu, alpha, &fit.theta);
            assert!(f <= prev + 1e-12, "sweep {k}: {f} > {prev}");
            prev = f;
        }
    }

    #[test]
    fn path_structure_and_warm_start_monotonicity() {
        let (g, b, nu) = random_instance(25, 18, 12);
        let path = lasso_path(&g, &b, &nu, 50, SolverOptions::default(), Start::Warm).unwrap();
        assert_eq!(path.len(), 50);
        assert_eq!(path.alphas[0], path.alpha_max);
        assert!(path.fits[0].support.is_empty());
        assert!(path.alphas.windows(2).all(|w| w[0] > w[1]));
        assert_relative_eq!(path.alphas[49], path.alpha_max / 50.0, epsilon = 1e-15);
        for k in 1..path.len() {
            let a = path.alphas[k];
            let here = objective(&g, &b, &nu, a, &path.fits[k].theta);
            let before = objective(&g, &b, &nu, a, &path.fits[k - 1].theta);
            assert!(here <= before + 1e-10);
            assert!(path.fits[k].converged);
        }
        let cold = lasso_path(&g, &b, &nu, 50, SolverOptions::default(), Start::Cold).unwrap();
        for (w, c) in path.fits.iter().zip(&cold.fits) {
            assert!((&w.theta - &c.theta).amax() < 1e-6);
        }
        assert!(lasso_path(&g, &b, &nu, 1, SolverOptions::default(), Start::Warm).is_err());
        assert!(lasso_path(&g, &DVector::zeros(25), &nu, 10, SolverOptions::default(), Start::Warm).is_err());
    }

    #[test]
    fn restricted_fit_edges() {
        let (g, b, nu) = random_instance(10, 14, 30);
        let path = lasso_path(&g, &b, &nu, 40, SolverOptions::default(), Start::Warm).unwrap();
        let r0 = cardinality_restricted_fit(&path, 0).unwrap();
        assert!(r0.fit.support.is_empty());
        assert_eq!(r0.fit.alpha, path.alpha_max);
        let all = cardinality_restricted_fit(&path, 10).unwrap();
        assert_eq!(all.index, path.len() - 1);
        assert!(!all.fallback);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn rescaling_leaves_solution_unchanged(seed in 0u64..1000, c in 0.2f64..5.0, frac in 0.05f64..0.9) {
            let (g, b, nu) = random_instance(8, 12, seed);
            let alpha = frac * alpha_max(&b, &nu);
            let opts = SolverOptions::default();
            let a = weighted_lasso(&g, &b, &nu, alpha, &DVector::zeros(8), opts).unwrap();
            let c2 = c * c;
            let s = weighted_lasso(&(&g * c2), &(&b * c2), &nu, alpha * c2, &DVector::zeros(8), opts).unwrap();
            prop_assert!((&a.theta - &s.theta).amax() <= 1e-7 * (1.0 + a.theta.amax()));
        }

        #[test]
        fn converged_fits_meet_kkt_bound(seed in 0u64..1000, frac in 0.0f64..1.2) {
            let (g, b, nu) = random_instance(9, 7, seed);
            let alpha = frac * alpha_max(&b, &nu);
            let fit = weighted_lasso(&g, &b, &nu, alpha, &DVector::zeros(9), SolverOptions::default()).unwrap();
            prop_assert!(fit.converged);
            prop_assert!(fit.kkt_residual <= 1e-9 * b.amax().max(1.0));
            prop_assert_eq!(fit.support.clone(), support_of(&fit.theta));
        }
    }
}
