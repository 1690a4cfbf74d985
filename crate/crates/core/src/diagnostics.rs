//! Empirical checks of the conditions behind the Lasso oracle inequalities:
//! restricted eigenvalues, the compatibility constant, the fast-rate
//! conditions for random dictionaries and the oracle-bound events themselves.
//!
//! Nothing here is a certificate. Probe results bracket the exact values from
//! one side only, and the compatibility estimate is the best local value found.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::lasso::LassoFit;
use crate::rng;

/// Largest number of supports the exhaustive mode will enumerate.
pub const EXHAUSTIVE_LIMIT: u128 = 5_000_000;

/// Largest support size the exhaustive mode accepts.
pub const EXHAUSTIVE_MAX_M: usize = 14;

/// Largest dictionary for the exhaustive search over index sets.
pub const EXHAUSTIVE_SUBSET_MAX_P: usize = 12;

pub fn binomial(p: usize, m: usize) -> u128 {
    if m > p {
        return 0;
    }
    let m = m.min(p - m);
    let mut c: u128 = 1;
    for i in 0..m {
        c = c * (p - i) as u128 / (i + 1) as u128;
    }
    c
}

fn extreme_eigenvalues(gram: &DMatrix<f64>, support: &[usize]) -> (f64, f64) {
    let m = support.len();
    let sub = DMatrix::from_fn(m, m, |a, b| gram[(support[a], support[b])]);
    let ev = SymmetricEigen::new(sub).eigenvalues;
    (ev.min(), ev.max())
}

/// Calls `visit` on every size-`m` subset of `0..p` whose smallest element is `first`.
fn for_each_combination_from(p: usize, m: usize, first: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (first..first + m).collect();
    if idx.last().is_none_or(|&l| l >= p) {
        return;
    }
    loop {
        visit(&idx);
        // advance positions 1.. only, keeping idx[0] fixed
        let mut i = m;
        loop {
            if i <= 1 {
                return;
            }
            i -= 1;
            if idx[i] < p - m + i {
                break;
            }
        }
        idx[i] += 1;
        for k in i + 1..m {
            idx[k] = idx[k - 1] + 1;
        }
    }
}

/// Exact restricted eigenvalues of `ΦᵀΦ` over all supports of size `m`.
pub fn restricted_eigenvalues(phi: &Dictionary, m: usize) -> Result<(f64, f64)> {
    restricted_eigenvalues_gram(&phi.matrix().tr_mul(phi.matrix()), m)
}

pub fn restricted_eigenvalues_gram(gram: &DMatrix<f64>, m: usize) -> Result<(f64, f64)> {
    let p = gram.ncols();
    if m == 0 || m > p {
        return Err(Error::invalid(format!("support size must lie in 1..={p}, got {m}")));
    }
    if m > EXHAUSTIVE_MAX_M {
        return Err(Error::Capacity {
            supports: binomial(p, m),
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let supports = binomial(p, m);
    if supports > EXHAUSTIVE_LIMIT {
        return Err(Error::Capacity {
            supports,
            limit: EXHAUSTIVE_LIMIT,
        });
    }
    let (lo, hi) = (0..=p - m)
        .into_par_iter()
        .map(|first| {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for_each_combination_from(p, m, first, |s| {
                let (a, b) = extreme_eigenvalues(gram, s);
                lo = lo.min(a);
                hi = hi.max(b);
            });
            (lo, hi)
        })
        .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), |x, y| (x.0.min(y.0), x.1.max(y.1)));
    Ok((lo.max(0.0), hi))
}

/// The `k`-th random support of a probe sequence. Supports depend only on
/// `(seed, k)`, so a longer probe run visits a superset of a shorter one.
pub fn probe_support(p: usize, m: usize, seed: u64, k: usize) -> Vec<usize> {
    let mut s = rng::stream(rng::derive_seed(seed, k as u64));
    let mut v = index::sample(&mut s, p, m).into_vec();
    v.sort_unstable();
    v
}

/// Randomized bounds `(lamin_ub, lamax_lb)` from `n_probes` random supports.
pub fn restricted_eigenvalue_probe(phi: &Dictionary, m: usize, n_probes: usize, seed: u64) -> Result<(f64, f64)> {
    restricted_eigenvalue_probe_gram(&phi.matrix().tr_mul(phi.matrix()), m, n_probes, seed)
}

pub fn restricted_eigenvalue_probe_gram(gram: &DMatrix<f64>, m: usize, n_probes: usize, seed: u64) -> Result<(f64, f64)> {
    let p = gram.ncols();
    if m == 0 || m > p {
        return Err(Error::invalid(format!("support size must lie in 1..={p}, got {m}")));
    }
    if n_probes == 0 {
        return Err(Error::invalid("need at least one probe"));
    }
    let (lo, hi) = (0..n_probes)
        .into_par_iter()
        .map(|k| extreme_eigenvalues(gram, &probe_support(p, m, seed, k)))
        .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), |x, y| (x.0.min(y.0), x.1.max(y.1)));
    Ok((lo.max(0.0), hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum EigenMode {
    Exhaustive,
    Probe { n_probes: usize, seed: u64 },
}

pub fn restricted_eigenvalues_with(gram: &DMatrix<f64>, m: usize, mode: EigenMode) -> Result<(f64, f64)> {
    match mode {
        EigenMode::Exhaustive => restricted_eigenvalues_gram(gram, m),
        EigenMode::Probe { n_probes, seed } => restricted_eigenvalue_probe_gram(gram, m, n_probes, seed),
    }
}

/// Projects `v` onto `{w : σ_j w_j ≥ 0, Σ σ_j w_j = 1}`.
fn project_signed_simplex(v: &mut [f64], signs: &[f64]) {
    let mut w: Vec<f64> = v.iter().zip(signs).map(|(x, s)| x * s).collect();
    let mut sorted = w.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    for (wi, (vi, s)) in w.iter_mut().zip(v.iter_mut().zip(signs)) {
        *wi = (*wi - theta).max(0.0);
        *vi = *wi * s;
    }
}

/// Projects `v` onto the ℓ1 ball of radius `r`.
fn project_l1_ball(v: &mut [f64], r: f64) {
    let norm: f64 = v.iter().map(|x| x.abs()).sum();
    if norm <= r {
        return;
    }
    let mut a: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    a.sort_by(|x, y| y.total_cmp(x));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, &x) in a.iter().enumerate() {
        cum += x;
        let t = (cum - r) / (i + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    for x in v.iter_mut() {
        *x = x.signum() * (x.abs() - theta).max(0.0);
    }
}

/// The ratio minimized by the compatibility constant, evaluated at `d`.
pub fn compatibility_ratio(gram: &DMatrix<f64>, nu: &DVector<f64>, support: &[usize], d: &DVector<f64>) -> f64 {
    let quad = d.dot(&(gram * d));
    let trace: f64 = support.iter().map(|&j| nu[j] * nu[j]).sum();
    let l1: f64 = support.iter().map(|&j| (nu[j] * d[j]).abs()).sum();
    quad * trace / (l1 * l1)
}

fn check_support(support: &[usize], p: usize) -> Result<()> {
    if support.is_empty() {
        return Err(Error::invalid("index set must be nonempty"));
    }
    let mut s = support.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.len() != support.len() || s.last().is_some_and(|&j| j >= p) {
        return Err(Error::invalid(format!("index set must hold distinct indices below {p}")));
    }
    Ok(())
}

/// Heuristic estimate of `κ²(μ, J)`.
///
/// In `u = Υd` coordinates the cone, normalized by `‖u_J‖₁ = 1`, splits into
/// one convex piece per sign pattern of `u_J`: a signed simplex on `J` times an
/// ℓ1 ball of radius `μ` on `Jᶜ`. Each piece is a convex quadratic program,
/// solved by accelerated projected gradient. All patterns are visited when
/// there are at most `n_probes` of them, otherwise `n_probes` random ones.
/// The result is the smallest value found, never below the true constant.
pub fn compatibility_lower_bound(
    phi: &Dictionary,
    nu: &DVector<f64>,
    mu: f64,
    support: &[usize],
    n_probes: usize,
    seed: u64,
) -> Result<f64> {
    compatibility_estimate_gram(&phi.matrix().tr_mul(phi.matrix()), nu, mu, support, n_probes, seed)
}

pub fn compatibility_estimate_gram(
    gram: &DMatrix<f64>,
    nu: &DVector<f64>,
    mu: f64,
    support: &[usize],
    n_probes: usize,
    seed: u64,
) -> Result<f64> {
    compatibility_minimizer_gram(gram, nu, mu, support, n_probes, seed).map(|(v, _)| v)
}

/// Like [`compatibility_estimate_gram`], also returning the cone point `d`
/// attaining the reported value.
pub fn compatibility_minimizer_gram(
    gram: &DMatrix<f64>,
    nu: &DVector<f64>,
    mu: f64,
    support: &[usize],
    n_probes: usize,
    seed: u64,
) -> Result<(f64, DVector<f64>)> {
    let p = gram.ncols();
    if nu.len() != p {
        return Err(Error::invalid(format!("{} weights for {p} atoms", nu.len())));
    }
    if !(mu > 1.0) {
        return Err(Error::invalid(format!("mu must exceed 1, got {mu}")));
    }
    if n_probes == 0 {
        return Err(Error::invalid("need at least one probe"));
    }
    check_support(support, p)?;
    if let Some(j) = nu.iter().position(|&w| !(w > 0.0)) {
        return Err(Error::DegenerateWeight { index: j });
    }
    let trace: f64 = support.iter().map(|&j| nu[j] * nu[j]).sum();
    // H = Υ⁻¹ G Υ⁻¹ so that dᵀGd = uᵀHu
    let h = DMatrix::from_fn(p, p, |a, b| gram[(a, b)] / (nu[a] * nu[b]));
    let lmax = SymmetricEigen::new(h.clone()).eigenvalues.max().max(f64::MIN_POSITIVE);
    let step = 1.0 / (2.0 * lmax);
    let in_j: Vec<bool> = (0..p).map(|j| support.contains(&j)).collect();
    let rest: Vec<usize> = (0..p).filter(|&j| !in_j[j]).collect();

    // patterns up to a global sign flip: the first sign of J is always +
    let k = support.len();
    let bits = k - 1;
    let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
    let patterns: Vec<u64> = if bits < 64 && (1u128 << bits) <= n_probes as u128 {
        (0..=mask).collect()
    } else {
        let mut s = rng::stream(seed);
        (0..n_probes).map(|_| s.random::<u64>() & mask).collect()
    };

    let solve = |pattern: u64, start_seed: u64| -> (f64, DVector<f64>) {
        let signs: Vec<f64> = (0..k)
            .map(|i| if i > 0 && (pattern >> ((i - 1) % 64)) & 1 == 1 { -1.0 } else { 1.0 })
            .collect();
        let project = |u: &mut DVector<f64>| {
            let mut uj: Vec<f64> = support.iter().map(|&j| u[j]).collect();
            project_signed_simplex(&mut uj, &signs);
            for (&j, v) in support.iter().zip(&uj) {
                u[j] = *v;
            }
            let mut uc: Vec<f64> = rest.iter().map(|&j| u[j]).collect();
            project_l1_ball(&mut uc, mu);
            for (&j, v) in rest.iter().zip(&uc) {
                u[j] = *v;
            }
        };
        let mut s = rng::stream(start_seed);
        let mut u = DVector::from_fn(p, |_, _| rng::standard_normal(&mut s));
        project(&mut u);
        let mut prev = u.clone();
        let mut y = u.clone();
        let mut t = 1.0f64;
        let mut best = u.dot(&(&h * &u));
        for _ in 0..20_000 {
            let grad = (&h * &y) * 2.0;
            let mut next = &y - grad * step;
            project(&mut next);
            let val = next.dot(&(&h * &next));
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if val > best {
                // adaptive restart
                t = 1.0;
                y = u.clone();
                continue;
            }
            best = val;
            prev.copy_from(&u);
            u = next;
            let change = (&u - &prev).amax();
            y = &u + (&u - &prev) * ((t - 1.0) / t_next);
            t = t_next;
            if change < 1e-13 {
                break;
            }
        }
        (best.max(0.0) * trace, u)
    };

    let (best, u) = patterns
        .par_iter()
        .enumerate()
        .map(|(i, &pat)| solve(pat, rng::derive_seed(seed ^ 0x9e37_79b9, i as u64)))
        .reduce_with(|a, b| if b.0 < a.0 { b } else { a })
        .expect("at least one pattern");
    Ok((best, u.component_div(nu)))
}

/// Least-squares fit of `f` on the atoms in `support`: returns the
/// coefficients and the projection `Φ_J t`. Rank-deficient sets use the
/// minimum-norm solution.
pub fn project_onto_atoms(phi: &DMatrix<f64>, support: &[usize], f: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    if support.is_empty() {
        return (DVector::zeros(0), DVector::zeros(f.len()));
    }
    let a = phi.select_columns(support);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let c = svd
        .solve(f, 1e-12 * smax)
        .unwrap_or_else(|_| DVector::zeros(support.len()));
    let fitted = &a * &c;
    (c, fitted)
}

/// Orthogonal projector onto `span{φ_j : j ∈ J}`.
pub fn projection_matrix(phi: &DMatrix<f64>, support: &[usize]) -> DMatrix<f64> {
    let n = phi.nrows();
    if support.is_empty() {
        return DMatrix::zeros(n, n);
    }
    let a = phi.select_columns(support);
    let svd = a.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&s| s > 1e-12 * smax).count();
    let ur = u.columns(0, rank);
    &ur * ur.transpose()
}

/// Criterion whose minimizer over index sets is `J*`:
/// `n⁻¹‖f − proj_J f‖² + K₀α² Σ_{j∈J} ν_j²`.
pub fn oracle_criterion(
    phi: &DMatrix<f64>,
    nu: &DVector<f64>,
    f: &DVector<f64>,
    support: &[usize],
    alpha: f64,
    k0: f64,
) -> f64 {
    let n = f.len() as f64;
    let (_, fitted) = project_onto_atoms(phi, support, f);
    let penalty: f64 = support.iter().map(|&j| nu[j] * nu[j]).sum();
    (f - fitted).norm_squared() / n + k0 * alpha * alpha * penalty
}

/// Forward selection on the `J*` criterion: repeatedly add the atom with the
/// largest decrease and stop as soon as no atom decreases it.
pub fn greedy_oracle_support(
    phi: &DMatrix<f64>,
    nu: &DVector<f64>,
    f: &DVector<f64>,
    alpha: f64,
    k0: f64,
) -> Vec<usize> {
    greedy_forward(phi, nu, f, alpha, k0, None)
}

/// The same forward selection run for exactly `size` steps (fewer only when
/// the remaining atoms are linearly dependent on the chosen ones), taking the
/// best atom even when it increases the criterion.
pub fn greedy_oracle_support_of_size(
    phi: &DMatrix<f64>,
    nu: &DVector<f64>,
    f: &DVector<f64>,
    alpha: f64,
    k0: f64,
    size: usize,
) -> Vec<usize> {
    greedy_forward(phi, nu, f, alpha, k0, Some(size))
}

fn greedy_forward(
    phi: &DMatrix<f64>,
    nu: &DVector<f64>,
    f: &DVector<f64>,
    alpha: f64,
    k0: f64,
    size: Option<usize>,
) -> Vec<usize> {
    let (n, p) = phi.shape();
    let limit = size.map_or(n, |s| s.min(n).min(p));
    let nf = n as f64;
    let pen = k0 * alpha * alpha;
    // orthonormal basis of the span chosen so far
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut chosen: Vec<usize> = Vec::new();
    let mut resid = f.clone();
    let orthogonalize = |v: &DVector<f64>, basis: &[DVector<f64>]| {
        let mut w = v.clone();
        for _ in 0..2 {
            for q in basis {
                let c = q.dot(&w);
                w.axpy(-c, q, 1.0);
            }
        }
        w
    };
    while chosen.len() < limit {
        let mut best: Option<(usize, f64, DVector<f64>)> = None;
        for j in 0..p {
            if chosen.contains(&j) {
                continue;
            }
            let col = phi.column(j).into_owned();
            let w = orthogonalize(&col, &basis);
            let wn = w.norm();
            if wn <= 1e-10 * col.norm() {
                continue;
            }
            let gain = (w.dot(&resid) / wn).powi(2) / nf;
            let delta = pen * nu[j] * nu[j] - gain;
            if best.as_ref().is_none_or(|(_, d, _)| delta < *d) {
                best = Some((j, delta, w / wn));
            }
        }
        match best {
            Some((j, delta, q)) if delta < 0.0 || size.is_some() => {
                let c = q.dot(&resid);
                resid.axpy(-c, &q, 1.0);
                basis.push(q);
                chosen.push(j);
            }
            _ => break,
        }
    }
    chosen.sort_unstable();
    chosen
}

/// Exact `J*` by enumerating every index set; only for `p ≤ 12`.
pub fn exhaustive_oracle_support(
    phi: &DMatrix<f64>,
    nu: &DVector<f64>,
    f: &DVector<f64>,
    alpha: f64,
    k0: f64,
) -> Result<(Vec<usize>, f64)> {
    let p = phi.ncols();
    if p > EXHAUSTIVE_SUBSET_MAX_P {
        return Err(Error::Capacity {
            supports: 1u128 << p,
            limit: 1u128 << EXHAUSTIVE_SUBSET_MAX_P,
        });
    }
    let (mask, val) = (0u32..1 << p)
        .into_par_iter()
        .map(|mask| {
            let s: Vec<usize> = (0..p).filter(|&j| mask >> j & 1 == 1).collect();
            (mask, oracle_criterion(phi, nu, f, &s, alpha, k0))
        })
        .reduce(
            || (0, f64::INFINITY),
            |a, b| if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a },
        );
    Ok(((0..p).filter(|&j| mask >> j & 1 == 1).collect(), val))
}

/// `n ≥ C₁ δ⁻² s log(e p / s)`.
pub fn sample_size_check(n: usize, p: usize, s: usize, delta: f64, c1: f64) -> Result<bool> {
    if n == 0 || p == 0 || s == 0 || s > p {
        return Err(Error::invalid(format!("need positive n, p and 1 <= s <= p; got n={n}, p={p}, s={s}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(c1 >= 0.0) {
        return Err(Error::invalid(format!("C1 must be nonnegative, got {c1}")));
    }
    Ok(n as f64 >= sample_size_requirement(p, s, delta, c1))
}

pub fn sample_size_requirement(p: usize, s: usize, delta: f64, c1: f64) -> f64 {
    let (p, s) = (p as f64, s as f64);
    c1 * s * (std::f64::consts::E * p / s).ln() / (delta * delta)
}

/// Smallest `K₀` allowed for a given `δ`: `4 / (1 − δ)²`.
pub fn min_k0(delta: f64) -> f64 {
    4.0 / ((1.0 - delta) * (1.0 - delta))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Options {
    pub s: usize,
    pub delta: f64,
    #[serde(rename = "K0")]
    pub k0: f64,
    pub mu: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    pub replications: usize,
    pub seed: u64,
    pub eigen_mode: EigenMode,
    pub kappa_probes: usize,
}

impl Theorem1Options {
    /// `δ = 0.5` with the smallest admissible `K₀`, `μ = 3` and `C₁ = 1`.
    pub fn new(s: usize, replications: usize, seed: u64) -> Self {
        Theorem1Options {
            s,
            delta: 0.5,
            k0: min_k0(0.5),
            mu: 3.0,
            c1: 1.0,
            replications,
            seed,
            eigen_mode: EigenMode::Probe { n_probes: 2000, seed },
            kappa_probes: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub n: usize,
    pub p: usize,
    pub lamin: f64,
    pub lamax: f64,
    pub s: usize,
    pub delta: f64,
    pub con1_holds: bool,
    pub con2_freq: f64,
    pub con3_freq: f64,
    pub kappa2_lower: f64,
    pub kappa_support: Vec<usize>,
    pub mu: f64,
    #[serde(rename = "K0")]
    pub k0: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    pub sample_size_holds: bool,
    pub mean_alpha: f64,
    pub replications: usize,
    pub seed: u64,
    pub eigen_mode: EigenMode,
}

impl ConditionReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Checks the restricted-eigenvalue, oracle-sparsity and fit-sparsity
/// conditions for a random dictionary.
///
/// `fit` is called once per replication with that replication's seed and
/// returns the Lasso fit for a fresh noise draw. Condition 2 evaluates `J*`
/// (greedy) at each fit's own penalty, condition 3 the fit's sparsity.
pub fn check_theorem1_conditions(
    phi: &Dictionary,
    nu: &DVector<f64>,
    f_true: &DVector<f64>,
    opts: &Theorem1Options,
    fit: impl Fn(u64) -> Result<LassoFit> + Sync,
) -> Result<ConditionReport> {
    let (n, p) = (phi.n(), phi.p());
    if nu.len() != p || f_true.len() != n {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} weights and signal of length {} for a {n}x{p} dictionary",
            nu.len(),
            f_true.len()
        )));
    }
    if !(opts.delta > 0.0 && opts.delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", opts.delta)));
    }
    let bound = min_k0(opts.delta);
    if !(opts.k0 >= bound * (1.0 - 1e-12)) {
        return Err(Error::invalid(format!("K0 = {} is below 4/(1-delta)^2 = {bound}", opts.k0)));
    }
    if opts.s == 0 || 2 * opts.s > n {
        return Err(Error::invalid(format!("s must lie in 1..={}, got {}", n / 2, opts.s)));
    }
    if opts.replications == 0 {
        return Err(Error::invalid("need at least one replication"));
    }
    let gram = phi.matrix().tr_mul(phi.matrix());
    let m = (2 * opts.s).min(p);
    let (lamin, lamax) = restricted_eigenvalues_with(&gram, m, opts.eigen_mode)?;

    let per_rep: Vec<(f64, Vec<usize>, usize)> = (0..opts.replications)
        .into_par_iter()
        .map(|r| {
            let fit = fit(rng::derive_seed(opts.seed, r as u64))?;
            let j = greedy_oracle_support(phi.matrix(), nu, f_true, fit.alpha, opts.k0);
            Ok((fit.alpha, j, fit.sparsity()))
        })
        .collect::<Result<_>>()?;
    let reps = opts.replications as f64;
    let con2 = per_rep.iter().filter(|(_, j, _)| j.len() <= opts.s).count() as f64 / reps;
    let con3 = per_rep.iter().filter(|(_, _, k)| *k <= opts.s).count() as f64 / reps;
    let mean_alpha = per_rep.iter().map(|(a, _, _)| a).sum::<f64>() / reps;

    let kappa_support = match per_rep.first() {
        Some((_, j, _)) if !j.is_empty() => j.clone(),
        _ => vec![(0..p).max_by(|&a, &b| nu[b].total_cmp(&nu[a])).unwrap_or(0)],
    };
    let kappa2 = compatibility_estimate_gram(&gram, nu, opts.mu, &kappa_support, opts.kappa_probes, opts.seed)?;

    Ok(ConditionReport {
        n,
        p,
        lamin,
        lamax,
        s: opts.s,
        delta: opts.delta,
        con1_holds: lamin >= 1.0 - opts.delta,
        con2_freq: con2,
        con3_freq: con3,
        kappa2_lower: kappa2,
        kappa_support,
        mu: opts.mu,
        k0: opts.k0,
        c1: opts.c1,
        sample_size_holds: sample_size_check(n, p, opts.s.min(p), opts.delta, opts.c1)?,
        mean_alpha,
        replications: opts.replications,
        seed: opts.seed,
        eigen_mode: opts.eigen_mode,
    })
}

#[derive(Debug, Clone, Copy)]
pub enum BoundVariant<'a> {
    /// Infimum over the supplied coefficient vectors `t`.
    Slow { candidates: &'a [DVector<f64>] },
    /// Projection onto the atoms in `support`, penalty `K₀α²Σ_J ν_j²`.
    Fast { support: &'a [usize], k0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// Checks one draw of an oracle inequality at the fit's penalty `α`:
/// the left side is `n⁻¹‖Φθ̂ − f‖²`.
pub fn empirical_oracle_bound(
    phi: &Dictionary,
    nu: &DVector<f64>,
    fit: &LassoFit,
    f_true: &DVector<f64>,
    variant: BoundVariant<'_>,
) -> Result<BoundCheck> {
    let (n, p) = (phi.n(), phi.p());
    if f_true.len() != n || nu.len() != p || fit.theta.len() != p {
        return Err(Error::invalid("dimension mismatch in oracle bound"));
    }
    let nf = n as f64;
    let alpha = fit.alpha;
    let lhs = (phi.synthesize(&fit.theta) - f_true).norm_squared() / nf;
    let rhs = match variant {
        BoundVariant::Slow { candidates } => {
            if candidates.is_empty() {
                return Err(Error::invalid("slow bound needs at least one candidate"));
            }
            let mut best = f64::INFINITY;
            for t in candidates {
                if t.len() != p {
                    return Err(Error::invalid(format!("candidate of length {}, expected {p}", t.len())));
                }
                let approx = (phi.synthesize(t) - f_true).norm_squared() / nf;
                let pen: f64 = t.iter().zip(nu.iter()).map(|(a, w)| w * a.abs()).sum();
                best = best.min(approx + 4.0 * alpha * pen);
            }
            best
        }
        BoundVariant::Fast { support, k0 } => {
            if support.iter().any(|&j| j >= p) {
                return Err(Error::invalid("support index out of range"));
            }
            oracle_criterion(phi.matrix(), nu, f_true, support, alpha, k0)
        }
    };
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs <= rhs,
    })
}

/// Candidates for the slow bound: `t = 0` and the least-squares fits of `f`
/// on the nested sets of a greedy (orthogonal matching pursuit) ordering, up to
/// `max_size` atoms.
pub fn slow_bound_candidates(phi: &Dictionary, f: &DVector<f64>, max_size: usize) -> Vec<DVector<f64>> {
    let p = phi.p();
    let mut out = vec![DVector::zeros(p)];
    let mut support: Vec<usize> = Vec::new();
    for _ in 0..max_size.min(p) {
        let next = greedy_step(phi.matrix(), f, &support);
        let Some(j) = next else { break };
        support.push(j);
        let (c, _) = project_onto_atoms(phi.matrix(), &support, f);
        let mut t = DVector::zeros(p);
        for (&j, v) in support.iter().zip(c.iter()) {
            t[j] = *v;
        }
        out.push(t);
    }
    out
}

fn greedy_step(phi: &DMatrix<f64>, f: &DVector<f64>, support: &[usize]) -> Option<usize> {
    let (_, fitted) = project_onto_atoms(phi, support, f);
    let r = f - fitted;
    let proj = projection_matrix(phi, support);
    let mut best: Option<(usize, f64)> = None;
    for j in 0..phi.ncols() {
        if support.contains(&j) {
            continue;
        }
        let col = phi.column(j).into_owned();
        let w = &col - &proj * &col;
        let wn = w.norm();
        if wn <= 1e-10 * col.norm() {
            continue;
        }
        let gain = (w.dot(&r) / wn).abs();
        if best.is_none_or(|(_, g)| gain > g) {
            best = Some((j, gain));
        }
    }
    best.map(|(j, _)| j)
}
