//! Inverse images, penalty weights and the covariance form of the weighted Lasso.
//!
//! For an invertible lower-triangular operator `Q` and dictionary `Φ`:
//!
//! * `Ψ` solves `QᵀΨ = Φ`, so `Ψᵀy` estimates `Φᵀf` without inverting `Q`
//!   inside the statistic;
//! * `ν_j = ‖ψ_j‖₂` is proportional to the noise std of `(Ψᵀy)_j`;
//! * the Lasso objective `‖Φt - z‖² + α Σ ν_j |t_j|` equals
//!   `tᵀGt - 2tᵀb + α Σ ν_j |t_j|` up to a constant, with `G = ΦᵀΦ`, `b = Ψᵀy`.

use nalgebra::{DMatrix, DVector};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::problem::Grid;

const PIVOT_FLOOR: f64 = 1e-14;

/// Default confidence exponent `τ`.
pub const DEFAULT_TAU: f64 = 1.0;

fn check_lower_triangular(q: &DMatrix<f64>) -> Result<()> {
    if !q.is_square() {
        return Err(Error::invalid(format!("operator must be square, got {}x{}", q.nrows(), q.ncols())));
    }
    for i in 0..q.nrows() {
        for j in i + 1..q.ncols() {
            if q[(i, j)] != 0.0 {
                return Err(Error::invalid(format!("operator is not lower triangular at ({i}, {j})")));
            }
        }
    }
    for i in 0..q.nrows() {
        let d = q[(i, i)];
        if !(d.abs() > PIVOT_FLOOR) {
            return Err(Error::SingularOperator { index: i, pivot: d.abs() });
        }
    }
    Ok(())
}

/// Solves `QᵀΨ = Φ` by back substitution on the upper-triangular `Qᵀ`.
pub fn compute_inverse_images(q: &DMatrix<f64>, phi: &Dictionary) -> Result<DMatrix<f64>> {
    check_lower_triangular(q)?;
    let n = q.nrows();
    if phi.n() != n {
        return Err(Error::invalid(format!("dictionary has {} rows, operator {}", phi.n(), n)));
    }
    let mut psi = phi.matrix().clone();
    for mut col in psi.column_iter_mut() {
        // (Qᵀ)_{ik} = Q_{ki}
        for i in (0..n).rev() {
            let mut acc = col[i];
            for k in i + 1..n {
                acc -= q[(k, i)] * col[k];
            }
            col[i] = acc / q[(i, i)];
        }
    }
    Ok(psi)
}

/// Column norms of `Ψ`.
pub fn compute_weights(psi: &DMatrix<f64>) -> Result<DVector<f64>> {
    let nu = DVector::from_iterator(psi.ncols(), psi.column_iter().map(|c| c.norm()));
    if let Some(index) = nu.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::DegenerateWeight { index });
    }
    Ok(nu)
}

/// Solves `Qz = y` by forward substitution.
pub fn compute_surrogate(q: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_lower_triangular(q)?;
    let n = q.nrows();
    if y.len() != n {
        return Err(Error::invalid(format!("observations have length {}, operator {}", y.len(), n)));
    }
    let mut z = y.clone();
    for i in 0..n {
        let mut acc = z[i];
        for k in 0..i {
            acc -= q[(i, k)] * z[k];
        }
        z[i] = acc / q[(i, i)];
    }
    Ok(z)
}

/// `G = ΦᵀΦ` and `b = Ψᵀy`.
pub fn compute_covariance_form(
    phi: &Dictionary,
    psi: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if psi.shape() != phi.matrix().shape() || y.len() != phi.n() {
        return Err(Error::invalid("dictionary, inverse images and observations disagree in size"));
    }
    let gram = phi.matrix().tr_mul(phi.matrix());
    let b = psi.tr_mul(y);
    Ok((gram, b))
}

/// Universal penalty level `σ_eff √(2 (τ+1) log p / n)` with `σ_eff = σ√(T/n)`.
pub fn alpha0(sigma: f64, grid: &Grid, p: usize, tau: f64) -> Result<f64> {
    if p < 2 {
        return Err(Error::invalid(format!("need p >= 2 atoms, got {p}")));
    }
    if !(tau > 0.0) {
        return Err(Error::invalid(format!("tau must be positive, got {tau}")));
    }
    let n = grid.len() as f64;
    let sigma_eff = sigma * grid.step().sqrt();
    Ok(sigma_eff * (2.0 * (tau + 1.0) * (p as f64).ln() / n).sqrt())
}

/// Everything the solver and the diagnostics need about one data set.
#[derive(Debug, Clone)]
pub struct PreconditionedSystem {
    pub psi: DMatrix<f64>,
    pub nu: DVector<f64>,
    pub gram: DMatrix<f64>,
    pub b: DVector<f64>,
    pub z: DVector<f64>,
    pub sigma: f64,
    pub tau: f64,
    pub alpha0: f64,
}

impl PreconditionedSystem {
    pub fn new(
        q: &DMatrix<f64>,
        phi: &Dictionary,
        y: &DVector<f64>,
        grid: &Grid,
        sigma: f64,
        tau: f64,
    ) -> Result<Self> {
        let psi = compute_inverse_images(q, phi)?;
        Self::from_inverse_images(psi, q, phi, y, grid, sigma, tau)
    }

    /// Reuses inverse images computed once for a fixed `(Q, Φ)` pair.
    pub fn from_inverse_images(
        psi: DMatrix<f64>,
        q: &DMatrix<f64>,
        phi: &Dictionary,
        y: &DVector<f64>,
        grid: &Grid,
        sigma: f64,
        tau: f64,
    ) -> Result<Self> {
        let nu = compute_weights(&psi)?;
        let (gram, b) = compute_covariance_form(phi, &psi, y)?;
        let z = compute_surrogate(q, y)?;
        let alpha0 = alpha0(sigma, grid, phi.p(), tau)?;
        Ok(PreconditionedSystem {
            psi,
            nu,
            gram,
            b,
            z,
            sigma,
            tau,
            alpha0,
        })
    }

    /// Replaces the data-dependent parts for new observations.
    pub fn with_observations(&self, q: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        let z = compute_surrogate(q, y)?;
        Ok(PreconditionedSystem {
            b: self.psi.tr_mul(y),
            z,
            ..self.clone()
        })
    }
}
