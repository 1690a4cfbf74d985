//! Overcomplete dictionaries: the fixed Laguerre system and random families.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{csv_to_file, Grid};
use crate::rng;

/// Laguerre polynomial `L_degree(x)` by the three-term recurrence
/// `(k+1) L_{k+1} = (2k+1-x) L_k - k L_{k-1}`.
pub fn laguerre_polynomial(degree: usize, x: f64) -> f64 {
    let mut prev = 1.0;
    if degree == 0 {
        return prev;
    }
    let mut cur = 1.0 - x;
    for k in 1..degree {
        let kf = k as f64;
        let next = ((2.0 * kf + 1.0 - x) * cur - kf * prev) / (kf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// Laguerre function `e^{-bx/2} L_degree(bx)`.
pub fn laguerre_function(degree: usize, b: f64, x: f64) -> f64 {
    (-b * x / 2.0).exp() * laguerre_polynomial(degree, b * x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Entries {
    Gaussian,
    Rademacher,
}

impl Entries {
    fn draw(self, rng: &mut rng::Rng) -> f64 {
        match self {
            Entries::Gaussian => StandardNormal.sample(rng),
            Entries::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// Which sub-Gaussian construction to draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RandomKind {
    /// Independent isotropic rows, entries scaled by `n^{-1/2}`.
    Rows,
    /// Independent columns rescaled to unit norm.
    Cols,
}

impl RandomKind {
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "rows" => Ok(RandomKind::Rows),
            "cols" => Ok(RandomKind::Cols),
            other => Err(Error::invalid(format!("unknown random dictionary kind '{other}' (expected rows or cols)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Laguerre { degrees: Vec<usize>, scales: Vec<f64> },
    SubGaussRows { seed: u64, entries: Entries },
    SubGaussCols { seed: u64, entries: Entries },
    TightFrameStruct { k: f64, m: usize, seed: u64 },
    Imported,
}

#[derive(Debug, Clone)]
pub struct Dictionary {
    phi: DMatrix<f64>,
    provenance: Provenance,
    normalized: bool,
}

impl Dictionary {
    /// Wraps an arbitrary column matrix. Rejects empty or zero columns.
    pub fn from_matrix(phi: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        if phi.ncols() == 0 || phi.nrows() == 0 {
            return Err(Error::invalid("dictionary must have at least one row and one column"));
        }
        if let Some(j) = (0..phi.ncols()).find(|&j| phi.column(j).norm() == 0.0) {
            return Err(Error::invalid(format!("dictionary column {j} is zero")));
        }
        let normalized = (0..phi.ncols()).all(|j| (phi.column(j).norm() - 1.0).abs() <= 1e-12);
        Ok(Dictionary {
            phi,
            provenance,
            normalized,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn n(&self) -> usize {
        self.phi.nrows()
    }

    pub fn p(&self) -> usize {
        self.phi.ncols()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// Rescales every column to unit Euclidean norm.
    pub fn normalize(mut self) -> Self {
        for mut c in self.phi.column_iter_mut() {
            let norm = c.norm();
            c /= norm;
        }
        self.normalized = true;
        self
    }

    /// Synthesis `Φθ`.
    pub fn synthesize(&self, theta: &DVector<f64>) -> DVector<f64> {
        &self.phi * theta
    }

    /// Column labels used as the CSV header.
    pub fn labels(&self) -> Vec<String> {
        match &self.provenance {
            Provenance::Laguerre { degrees, scales } => scales
                .iter()
                .flat_map(|b| degrees.iter().map(move |d| format!("lag_d{d}_b{b}")))
                .collect(),
            Provenance::SubGaussRows { .. } => (0..self.p()).map(|j| format!("rows_{j}")).collect(),
            Provenance::SubGaussCols { .. } => (0..self.p()).map(|j| format!("cols_{j}")).collect(),
            Provenance::TightFrameStruct { .. } => (0..self.p()).map(|j| format!("frame_{j}")).collect(),
            Provenance::Imported => (0..self.p()).map(|j| format!("atom_{j}")).collect(),
        }
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
        self.write_csv_to(file)
    }

    /// One header row of atom labels, then one row per grid point.
    pub fn write_csv_to(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.labels())?;
        for i in 0..self.n() {
            w.write_record(self.phi.row(i).iter().map(|v| v.to_string()))?;
        }
        w.flush().map_err(|e| Error::file("<output>", e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_to_file(path, e))?;
        let p = r.headers()?.len();
        let mut data = Vec::new();
        let mut n = 0;
        for rec in r.records() {
            let rec = rec?;
            for v in rec.iter() {
                data.push(
                    v.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?,
                );
            }
            n += 1;
        }
        if n == 0 || data.len() != n * p {
            return Err(Error::Parse(format!("{}: ragged or empty dictionary", path.display())));
        }
        Dictionary::from_matrix(DMatrix::from_row_slice(n, p, &data), Provenance::Imported)
    }
}

/// The Laguerre system `φ_{d,b}` sampled on `grid`, columns ordered scale-major
/// (all degrees of the first scale, then the next scale) and scaled to unit norm.
pub fn build_laguerre_dictionary(grid: &Grid, degrees: &[usize], scales: &[f64]) -> Result<Dictionary> {
    if degrees.is_empty() || scales.is_empty() {
        return Err(Error::invalid("need at least one degree and one scale"));
    }
    if let Some(b) = scales.iter().find(|b| !(**b > 0.0)) {
        return Err(Error::invalid(format!("scales must be positive, got {b}")));
    }
    for (i, d) in degrees.iter().enumerate() {
        if degrees[..i].contains(d) {
            return Err(Error::invalid(format!("duplicate degree {d}")));
        }
    }
    for (i, b) in scales.iter().enumerate() {
        if scales[..i].contains(b) {
            return Err(Error::invalid(format!("duplicate scale {b}")));
        }
    }
    let n = grid.len();
    let mut phi = DMatrix::zeros(n, degrees.len() * scales.len());
    let mut col = 0;
    for &b in scales {
        for &d in degrees {
            for (i, &x) in grid.points().iter().enumerate() {
                phi[(i, col)] = laguerre_function(d, b, x);
            }
            col += 1;
        }
    }
    let dict = Dictionary::from_matrix(
        phi,
        Provenance::Laguerre {
            degrees: degrees.to_vec(),
            scales: scales.to_vec(),
        },
    )?;
    Ok(dict.normalize())
}

/// Degrees `{0, 1, 2, 3}` and scales `{k/4 : k = 1..16}`: 64 atoms.
pub fn default_laguerre_parameters() -> (Vec<usize>, Vec<f64>) {
    ((0..4).collect(), (1..=16).map(|k| k as f64 / 4.0).collect())
}

pub fn default_laguerre_dictionary(grid: &Grid) -> Result<Dictionary> {
    let (degrees, scales) = default_laguerre_parameters();
    build_laguerre_dictionary(grid, &degrees, &scales)
}

pub fn build_random_dictionary(kind: RandomKind, n: usize, p: usize, seed: u64) -> Result<Dictionary> {
    build_random_dictionary_with(kind, Entries::Gaussian, n, p, seed)
}

pub fn build_random_dictionary_with(
    kind: RandomKind,
    entries: Entries,
    n: usize,
    p: usize,
    seed: u64,
) -> Result<Dictionary> {
    if n == 0 || p == 0 {
        return Err(Error::invalid("dictionary dimensions must be positive"));
    }
    let mut stream = rng::stream(seed);
    let mut phi = DMatrix::from_fn(n, p, |_, _| entries.draw(&mut stream));
    match kind {
        RandomKind::Rows => {
            phi /= (n as f64).sqrt();
            Dictionary::from_matrix(phi, Provenance::SubGaussRows { seed, entries })
        }
        RandomKind::Cols => {
            let d = Dictionary::from_matrix(phi, Provenance::SubGaussCols { seed, entries })?;
            Ok(d.normalize())
        }
    }
}

/// A matrix with `D Dᵀ = k² I_n`.
#[derive(Debug, Clone)]
pub struct TightFrame {
    d: DMatrix<f64>,
    k: f64,
}

impl TightFrame {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn n(&self) -> usize {
        self.d.nrows()
    }

    pub fn m(&self) -> usize {
        self.d.ncols()
    }

    /// Spectral norm of `D Dᵀ - k² I`.
    pub fn identity_defect(&self) -> f64 {
        let mut gram = &self.d * self.d.transpose();
        for i in 0..self.n() {
            gram[(i, i)] -= self.k * self.k;
        }
        gram.symmetric_eigenvalues().amax()
    }
}

/// `k` times the first `n` rows of the orthonormal `m × m` DCT-II matrix.
pub fn build_tight_frame(n: usize, m: usize, k: f64) -> Result<TightFrame> {
    if n == 0 {
        return Err(Error::invalid("frame needs at least one row"));
    }
    if m < n {
        return Err(Error::invalid(format!("frame needs m >= n, got m = {m}, n = {n}")));
    }
    if !(k > 0.0) {
        return Err(Error::invalid(format!("frame constant must be positive, got {k}")));
    }
    let mf = m as f64;
    let d = DMatrix::from_fn(n, m, |r, c| {
        let s = if r == 0 { (1.0 / mf).sqrt() } else { (2.0 / mf).sqrt() };
        k * s * (PI * (2.0 * c as f64 + 1.0) * r as f64 / (2.0 * mf)).cos()
    });
    Ok(TightFrame { d, k })
}

/// `Φ = (k√n)⁻¹ D W` with `W` an `m × p` standard Gaussian matrix.
pub fn build_structured_dictionary(frame: &TightFrame, p: usize, seed: u64) -> Result<Dictionary> {
    if p == 0 {
        return Err(Error::invalid("dictionary needs at least one column"));
    }
    let mut stream = rng::stream(seed);
    let w = DMatrix::from_fn(frame.m(), p, |_, _| rng::standard_normal(&mut stream));
    Dictionary::from_matrix(
        structured_atoms(frame, &w),
        Provenance::TightFrameStruct {
            k: frame.k(),
            m: frame.m(),
            seed,
        },
    )
}

pub(crate) fn structured_atoms(frame: &TightFrame, w: &DMatrix<f64>) -> DMatrix<f64> {
    (frame.matrix() * w) / (frame.k() * (frame.n() as f64).sqrt())
}
