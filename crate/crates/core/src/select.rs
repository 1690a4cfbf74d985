//! Data-driven choice of the Lasso penalty along a path.
//!
//! A wavelet pilot `q̂` of the noiseless image is formed by hard universal
//! thresholding; the path point minimizing
//! `n⁻¹‖QΦθ̂_k - q̂‖² + 2σ_eff² n⁻¹ |supp θ̂_k|` is selected.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::lasso::{lasso_path, LassoFit, LassoPath, SolverOptions, Start};
use crate::precondition::PreconditionedSystem;
use crate::problem::{csv_to_file, InverseProblem};
use crate::wavelet::{dwt_forward, dwt_inverse, max_levels, Family};

#[derive(Debug, Clone)]
pub struct PilotEstimate {
    pub q_hat: DVector<f64>,
    pub threshold: f64,
    /// Nonzero coefficients after thresholding, approximation included.
    pub kept_coeffs: usize,
    /// Detail coefficients surviving the threshold.
    pub kept_details: usize,
}

/// Universal threshold `σ_eff √(2 log n)`.
pub fn universal_threshold(sigma_eff: f64, n: usize) -> f64 {
    sigma_eff * (2.0 * (n as f64).ln()).sqrt()
}

pub fn pilot_estimate_q(y: &DVector<f64>, sigma_eff: f64) -> Result<PilotEstimate> {
    pilot_estimate_with(y, sigma_eff, Family::Db8)
}

/// Hard thresholding of all detail levels; the 4 coarsest approximation
/// coefficients are kept as they are.
pub fn pilot_estimate_with(y: &DVector<f64>, sigma_eff: f64, family: Family) -> Result<PilotEstimate> {
    let n = y.len();
    if !(sigma_eff >= 0.0) {
        return Err(Error::invalid(format!("noise scale must be nonnegative, got {sigma_eff}")));
    }
    let levels = max_levels(n);
    let mut c = dwt_forward(y.as_slice(), levels, family)?;
    let threshold = universal_threshold(sigma_eff, n);
    let approx = n >> levels;
    let mut kept_details = 0;
    for v in c[approx..].iter_mut() {
        if v.abs() > threshold {
            kept_details += 1;
        } else {
            *v = 0.0;
        }
    }
    let kept_coeffs = c.iter().filter(|v| **v != 0.0).count();
    let q_hat = DVector::from_vec(dwt_inverse(&c, levels, family)?);
    Ok(PilotEstimate {
        q_hat,
        threshold,
        kept_coeffs,
        kept_details,
    })
}

/// Space in which fitted path points are compared with the pilot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparison {
    /// `QΦθ̂`, the data space where `q̂` lives.
    #[default]
    Image,
    /// `Φθ̂` directly.
    Signal,
}

#[derive(Debug, Clone)]
pub struct SelectionResult {
    /// Zero-based index into the path.
    pub k_hat: usize,
    pub alpha_hat: f64,
    pub criterion_values: Vec<f64>,
    pub fit_terms: Vec<f64>,
    pub penalty_terms: Vec<f64>,
    pub alphas: Vec<f64>,
}

impl SelectionResult {
    /// Writes `k, alpha, fit_term, penalty_term, criterion`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_to_file(path, e))?;
        w.write_record(["k", "alpha", "fit_term", "penalty_term", "criterion"])?;
        for k in 0..self.criterion_values.len() {
            w.write_record([
                k.to_string(),
                self.alphas[k].to_string(),
                self.fit_terms[k].to_string(),
                self.penalty_terms[k].to_string(),
                self.criterion_values[k].to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::file(path, e))?;
        Ok(())
    }
}

/// Index of the smallest value, first one on ties.
pub fn argmin(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|b| v < values[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn cp_select(
    path: &LassoPath,
    q: &DMatrix<f64>,
    phi: &Dictionary,
    q_hat: &DVector<f64>,
    sigma_eff: f64,
) -> Result<SelectionResult> {
    cp_select_in(path, q, phi, q_hat, sigma_eff, Comparison::Image)
}

pub fn cp_select_in(
    path: &LassoPath,
    q: &DMatrix<f64>,
    phi: &Dictionary,
    q_hat: &DVector<f64>,
    sigma_eff: f64,
    space: Comparison,
) -> Result<SelectionResult> {
    if path.is_empty() {
        return Err(Error::invalid("cannot select from an empty path"));
    }
    let n = q_hat.len();
    if phi.n() != n || q.shape() != (n, n) {
        return Err(Error::invalid("operator, dictionary and pilot disagree in size"));
    }
    let image = match space {
        Comparison::Image => q * phi.matrix(),
        Comparison::Signal => phi.matrix().clone(),
    };
    let nf = n as f64;
    let mut fit_terms = Vec::with_capacity(path.len());
    let mut penalty_terms = Vec::with_capacity(path.len());
    for fit in &path.fits {
        fit_terms.push((&image * &fit.theta - q_hat).norm_squared() / nf);
        penalty_terms.push(2.0 * sigma_eff * sigma_eff * fit.sparsity() as f64 / nf);
    }
    let criterion_values: Vec<f64> = fit_terms.iter().zip(&penalty_terms).map(|(a, b)| a + b).collect();
    let k_hat = argmin(&criterion_values).expect("nonempty path");
    Ok(SelectionResult {
        k_hat,
        alpha_hat: path.fits[k_hat].alpha,
        criterion_values,
        fit_terms,
        penalty_terms,
        alphas: path.fits.iter().map(|f| f.alpha).collect(),
    })
}

/// `f̂ = Φθ̂`.
pub fn estimate_f(fit: &LassoFit, phi: &Dictionary) -> Result<DVector<f64>> {
    if fit.theta.len() != phi.p() {
        return Err(Error::invalid(format!(
            "fit has {} coefficients, dictionary {} atoms",
            fit.theta.len(),
            phi.p()
        )));
    }
    Ok(phi.synthesize(&fit.theta))
}

#[derive(Debug, Clone, Copy)]
pub struct LassoCvOptions {
    pub grid_size: usize,
    pub tau: f64,
    pub solver: SolverOptions,
    pub comparison: Comparison,
    pub family: Family,
}

impl Default for LassoCvOptions {
    fn default() -> Self {
        LassoCvOptions {
            grid_size: 200,
            tau: crate::precondition::DEFAULT_TAU,
            solver: SolverOptions::default(),
            comparison: Comparison::Image,
            family: Family::Db8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LassoCvResult {
    pub f_hat: DVector<f64>,
    pub path: LassoPath,
    pub pilot: PilotEstimate,
    pub selection: SelectionResult,
    pub system: PreconditionedSystem,
}

impl LassoCvResult {
    pub fn selected(&self) -> &LassoFit {
        &self.path.fits[self.selection.k_hat]
    }
}

/// The full data-driven estimator: precondition, trace the path, build the
/// pilot and select. `psi` may carry precomputed inverse images for `(Q, Φ)`.
pub fn lasso_cv(
    problem: &InverseProblem,
    phi: &Dictionary,
    psi: Option<&DMatrix<f64>>,
    sigma_eff: f64,
    opts: &LassoCvOptions,
) -> Result<LassoCvResult> {
    let q = &problem.operator;
    let system = match psi {
        Some(psi) => PreconditionedSystem::from_inverse_images(
            psi.clone(),
            q,
            phi,
            &problem.y,
            &problem.grid,
            problem.sigma,
            opts.tau,
        )?,
        None => PreconditionedSystem::new(q, phi, &problem.y, &problem.grid, problem.sigma, opts.tau)?,
    };
    let path = lasso_path(&system.gram, &system.b, &system.nu, opts.grid_size, opts.solver, Start::Warm)?;
    let pilot = pilot_estimate_with(&problem.y, sigma_eff, opts.family)?;
    let selection = cp_select_in(&path, q, phi, &pilot.q_hat, sigma_eff, opts.comparison)?;
    let f_hat = estimate_f(&path.fits[selection.k_hat], phi)?;
    Ok(LassoCvResult {
        f_hat,
        path,
        pilot,
        selection,
        system,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{build_laguerre_dictionary, default_laguerre_dictionary, Provenance};
    use crate::lasso::weighted_lasso;
    use crate::problem::{build_convolution_operator, evaluate_test_function, Grid, Kernel, TestFunction};
    use crate::rng;

    #[test]
    fn zero_noise_pilot_is_identity() {
        let y = DVector::from_fn(32, |i, _| (i as f64 * 0.3).sin());
        let p = pilot_estimate_q(&y, 0.0).unwrap();
        assert_eq!(p.threshold, 0.0);
        assert!((&p.q_hat - &y).amax() < 1e-12);
    }

    #[test]
    fn pilot_rejects_non_power_of_two() {
        assert!(pilot_estimate_q(&DVector::zeros(48), 1.0).is_err());
    }

    #[test]
    fn thresholding_is_idempotent() {
        let mut s = rng::stream(4);
        let y = DVector::from_fn(64, |i, _| (i as f64 / 10.0).cos() + 0.3 * rng::standard_normal(&mut s));
        let once = pilot_estimate_q(&y, 0.3).unwrap();
        let twice = pilot_estimate_q(&once.q_hat, 0.3).unwrap();
        assert!((&once.q_hat - &twice.q_hat).amax() < 1e-12);
        assert_eq!(once.kept_coeffs, twice.kept_coeffs);
    }

    #[test]
    fn pure_noise_is_killed() {
        let sigma = 0.7;
        let mut clean = 0;
        for seed in 0..200 {
            let mut s = rng::stream(seed);
            let y = DVector::from_fn(64, |_, _| sigma * rng::standard_normal(&mut s));
            let p = pilot_estimate_q(&y, sigma).unwrap();
            if p.kept_details == 0 {
                clean += 1;
            }
        }
        // 60 detail coefficients of i.i.d. N(0, σ²): P(all below σ√(2 ln 64)) = (1 - 2Φ̄(t))^60
        let t = (2.0 * 64f64.ln()).sqrt();
        let tail = 0.5 * statrs::function::erf::erfc(t / std::f64::consts::SQRT_2);
        let exact = (1.0 - 2.0 * tail).powi(60);
        assert!((exact - 0.790).abs() < 0.005, "{exact}");
        let freq = clean as f64 / 200.0;
        let slack = 3.0 * (exact * (1.0 - exact) / 200.0).sqrt();
        assert!((freq - exact).abs() <= slack, "{clean}/200 vs {exact}");
    }

    #[test]
    fn pilot_denoises_convolution_data() {
        let g = Grid::new(4.0, 64).unwrap();
        let q = build_convolution_operator(|x| Kernel::Exp.eval(x), &g);
        let qf = &q * evaluate_test_function(TestFunction::F1, &g);
        let sigma_eff = qf.norm() / 64f64.sqrt() / 5.0;
        let mut better = 0;
        for seed in 0..200 {
            let mut s = rng::stream(seed);
            let y = &qf + DVector::from_fn(64, |_, _| sigma_eff * rng::standard_normal(&mut s));
            let p = pilot_estimate_q(&y, sigma_eff).unwrap();
            if (&p.q_hat - &qf).norm_squared() < (&y - &qf).norm_squared() {
                better += 1;
            }
        }
        assert!(better as f64 / 200.0 >= 0.95, "{better}/200");
    }

    fn laguerre_setup(n: usize) -> (Grid, DMatrix<f64>, Dictionary) {
        let g = Grid::new(4.0, n).unwrap();
        let q = build_convolution_operator(|x| Kernel::Exp.eval(x), &g);
        let d = default_laguerre_dictionary(&g).unwrap();
        (g, q, d)
    }

    #[test]
    fn noiseless_selection_picks_best_image_fit() {
        let (g, q, d) = laguerre_setup(32);
        let f = evaluate_test_function(TestFunction::F1, &g);
        let y = &q * &f;
        let sys = PreconditionedSystem::new(&q, &d, &y, &g, 0.0, 1.0).unwrap();
        let path = lasso_path(&sys.gram, &sys.b, &sys.nu, 40, SolverOptions::default(), Start::Warm).unwrap();
        let sel = cp_select(&path, &q, &d, &y, 0.0).unwrap();
        let qphi = &q * d.matrix();
        let best = (&qphi * &path.fits[sel.k_hat].theta - &y).norm_squared();
        for fit in &path.fits {
            assert!(best <= (&qphi * &fit.theta - &y).norm_squared());
        }
        assert_eq!(sel.alpha_hat, path.alphas[sel.k_hat]);
    }

    #[test]
    fn single_point_path() {
        let (g, q, d) = laguerre_setup(32);
        let y = &q * evaluate_test_function(TestFunction::F2, &g);
        let sys = PreconditionedSystem::new(&q, &d, &y, &g, 0.0, 1.0).unwrap();
        let mut path = lasso_path(&sys.gram, &sys.b, &sys.nu, 5, SolverOptions::default(), Start::Warm).unwrap();
        path.fits.truncate(1);
        path.alphas.truncate(1);
        let sel = cp_select(&path, &q, &d, &y, 0.1).unwrap();
        assert_eq!(sel.k_hat, 0);
    }

    #[test]
    fn argmin_ties_and_invariances() {
        assert_eq!(argmin(&[3.0, 1.0, 1.0, 2.0]), Some(1));
        assert_eq!(argmin(&[]), None);
        let vals = [0.4, 0.2, 0.9, 0.15, 0.7];
        let shifted: Vec<f64> = vals.iter().map(|v| v + 10.0).collect();
        assert_eq!(argmin(&vals), argmin(&shifted));
        let perm = [4usize, 2, 0, 3, 1];
        let permuted: Vec<f64> = perm.iter().map(|&i| vals[i]).collect();
        assert_eq!(perm[argmin(&permuted).unwrap()], argmin(&vals).unwrap());
    }

    #[test]
    fn estimate_f_basics() {
        let g = Grid::new(4.0, 16).unwrap();
        let d = build_laguerre_dictionary(&g, &[0, 1], &[0.5, 1.0]).unwrap();
        let mut fit = weighted_lasso(
            &DMatrix::identity(4, 4),
            &DVector::zeros(4),
            &DVector::from_element(4, 1.0),
            1.0,
            &DVector::zeros(4),
            SolverOptions::default(),
        )
        .unwrap();
        assert!(estimate_f(&fit, &d).unwrap().iter().all(|&v| v == 0.0));
        fit.theta[2] = 1.0;
        assert_eq!(estimate_f(&fit, &d).unwrap(), d.matrix().column(2).into_owned());
        let other = Dictionary::from_matrix(DMatrix::identity(16, 3), Provenance::Imported).unwrap();
        assert!(estimate_f(&fit, &other).is_err());
    }

    #[test]
    fn noiseless_exact_recovery_along_path() {
        let (g, q, d) = laguerre_setup(32);
        let mut theta = DVector::zeros(d.p());
        theta[0] = 0.8;
        theta[9] = -0.5;
        theta[30] = 0.3;
        let f = d.synthesize(&theta);
        let y = &q * &f;
        let sys = PreconditionedSystem::new(&q, &d, &y, &g, 0.0, 1.0).unwrap();
        let path = lasso_path(&sys.gram, &sys.b, &sys.nu, 50, SolverOptions::default(), Start::Warm).unwrap();
        // continue the path towards α → 0 from its last point
        let alpha = path.alpha_max * 1e-7;
        let last = &path.fits[path.len() - 1].theta;
        let fit = weighted_lasso(&sys.gram, &sys.b, &sys.nu, alpha, last, SolverOptions::default()).unwrap();
        let f_hat = estimate_f(&fit, &d).unwrap();
        let err = (f_hat - &f).norm() / 32f64.sqrt();
        assert!(err <= 1e-4, "{err}");
    }
}
