//! Discretized causal convolution problems `y = Qf + noise`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Uniform observation grid on `(0, T]`: `x_i = (i + 1) T / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    t_max: f64,
    points: Vec<f64>,
}

impl Grid {
    pub fn new(t_max: f64, n: usize) -> Result<Self> {
        if !(t_max > 0.0) || !t_max.is_finite() {
            return Err(Error::invalid(format!("domain endpoint must be positive, got {t_max}")));
        }
        if n == 0 {
            return Err(Error::invalid("grid needs at least one point"));
        }
        let step = t_max / n as f64;
        let points = (0..n).map(|i| (i + 1) as f64 * step).collect();
        Ok(Grid { t_max, points })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn step(&self) -> f64 {
        self.t_max / self.points.len() as f64
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Evaluates `f` at every grid point.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.points.iter().map(|&x| f(x)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TestFunction {
    F1,
    F2,
    F3,
}

impl TestFunction {
    pub const ALL: [TestFunction; 3] = [TestFunction::F1, TestFunction::F2, TestFunction::F3];

    pub fn eval(self, x: f64) -> f64 {
        match self {
            TestFunction::F1 => x * x * (-3.0 * x).exp(),
            TestFunction::F2 => x.powi(4) * (-4.0 * x).exp(),
            TestFunction::F3 => (-x / 2.0).exp(),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            TestFunction::F1 => "f1",
            TestFunction::F2 => "f2",
            TestFunction::F3 => "f3",
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "f1" => Ok(TestFunction::F1),
            "f2" => Ok(TestFunction::F2),
            "f3" => Ok(TestFunction::F3),
            other => Err(Error::invalid(format!("unknown test function '{other}' (expected f1, f2 or f3)"))),
        }
    }
}

pub fn evaluate_test_function(id: TestFunction, grid: &Grid) -> DVector<f64> {
    grid.sample(|x| id.eval(x))
}

/// Estimated L² distance `n^{-1/2} ‖a - b‖₂`.
pub fn rms_error(estimate: &DVector<f64>, truth: &DVector<f64>) -> f64 {
    (estimate - truth).norm() / (truth.len() as f64).sqrt()
}

/// Convolution kernels selectable by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    /// `g(x) = exp(-x)`, the Laplace convolution kernel.
    Exp,
}

impl Kernel {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Kernel::Exp => (-x).exp(),
        }
    }

    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "exp" => Ok(Kernel::Exp),
            other => Err(Error::invalid(format!("unknown kernel '{other}' (expected exp)"))),
        }
    }
}

/// Lower-triangular trapezoidal discretization of `q(x) = ∫_0^x g(x - t) f(t) dt`.
///
/// Quadrature nodes are `t = 0` followed by the grid points; the value of `f`
/// at `t = 0` is taken to be its value at the first grid point, so that node
/// folds into column 0.
pub fn build_convolution_operator(kernel: impl Fn(f64) -> f64, grid: &Grid) -> DMatrix<f64> {
    let n = grid.len();
    let h = grid.step();
    let x = grid.points();
    let mut q = DMatrix::zeros(n, n);
    for i in 0..n {
        // t = 0 endpoint, extrapolated onto column 0
        q[(i, 0)] += 0.5 * h * kernel(x[i]);
        for j in 0..i {
            q[(i, j)] += h * kernel(x[i] - x[j]);
        }
        q[(i, i)] += 0.5 * h * kernel(0.0);
    }
    q
}

/// Noise scale `σ` such that RMS(q) over the per-sample noise std `σ√(T/n)` equals `snr`.
pub fn sigma_from_snr(q: &DVector<f64>, snr: f64, t_max: f64) -> Result<f64> {
    if !(snr > 0.0) {
        return Err(Error::invalid(format!("snr must be positive, got {snr}")));
    }
    if !(t_max > 0.0) {
        return Err(Error::invalid(format!("domain endpoint must be positive, got {t_max}")));
    }
    let norm = q.norm();
    if norm == 0.0 {
        return Err(Error::invalid("signal image is identically zero; snr undefined"));
    }
    Ok(norm / (snr * t_max.sqrt()))
}

/// Per-sample noise standard deviation `σ√(T/n)`.
pub fn noise_scale(sigma: f64, grid: &Grid) -> f64 {
    sigma * grid.step().sqrt()
}

/// `y = Qf + σ√(T/n) ξ` with `ξ` drawn from the stream keyed by `seed`.
pub fn synthesize_observations(
    q: &DMatrix<f64>,
    f: &DVector<f64>,
    sigma: f64,
    grid: &Grid,
    seed: u64,
) -> Result<DVector<f64>> {
    let n = grid.len();
    if q.nrows() != n || q.ncols() != f.len() {
        return Err(Error::invalid(format!(
            "operator is {}x{}, signal has length {}, grid has {} points",
            q.nrows(),
            q.ncols(),
            f.len(),
            n
        )));
    }
    if !(sigma >= 0.0) {
        return Err(Error::invalid(format!("sigma must be nonnegative, got {sigma}")));
    }
    let mut y = q * f;
    if sigma > 0.0 {
        let scale = noise_scale(sigma, grid);
        let mut stream = rng::stream(seed);
        for v in y.iter_mut() {
            let xi: f64 = StandardNormal.sample(&mut stream);
            *v += scale * xi;
        }
    }
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct InverseProblem {
    pub grid: Grid,
    pub operator: DMatrix<f64>,
    pub f_true: Option<DVector<f64>>,
    pub y: DVector<f64>,
    pub sigma: f64,
}

impl InverseProblem {
    /// Builds the convolution problem for a test function at a given SNR.
    pub fn simulate(
        kernel: Kernel,
        func: TestFunction,
        grid: Grid,
        snr: f64,
        seed: u64,
    ) -> Result<Self> {
        let operator = build_convolution_operator(|x| kernel.eval(x), &grid);
        let f = evaluate_test_function(func, &grid);
        let sigma = sigma_from_snr(&(&operator * &f), snr, grid.t_max())?;
        Self::with_sigma(operator, f, sigma, grid, seed)
    }

    pub fn with_sigma(
        operator: DMatrix<f64>,
        f: DVector<f64>,
        sigma: f64,
        grid: Grid,
        seed: u64,
    ) -> Result<Self> {
        let y = synthesize_observations(&operator, &f, sigma, &grid, seed)?;
        Ok(InverseProblem {
            grid,
            operator,
            f_true: Some(f),
            y,
            sigma,
        })
    }

    pub fn n(&self) -> usize {
        self.grid.len()
    }

    /// Per-sample noise standard deviation of the observations.
    pub fn noise_scale(&self) -> f64 {
        noise_scale(self.sigma, &self.grid)
    }

    /// Noiseless image `Qf`, when the truth is known.
    pub fn clean_image(&self) -> Option<DVector<f64>> {
        self.f_true.as_ref().map(|f| &self.operator * f)
    }

    /// Writes columns `x, f_true, q, y`; unknown truth leaves `f_true` and `q` empty.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_to_file(path, e))?;
        w.write_record(["x", "f_true", "q", "y"])?;
        let q = self.clean_image();
        for (i, &x) in self.grid.points().iter().enumerate() {
            let f = self.f_true.as_ref().map(|f| f[i].to_string()).unwrap_or_default();
            let qi = q.as_ref().map(|q| q[i].to_string()).unwrap_or_default();
            w.write_record([x.to_string(), f, qi, self.y[i].to_string()])?;
        }
        w.flush().map_err(|e| Error::file(path, e))?;
        Ok(())
    }

    /// Reads a problem dump. Only `x` and `y` are required; the grid is
    /// reconstructed from the row count and the last abscissa.
    pub fn read_csv(path: impl AsRef<Path>, kernel: Kernel, sigma: f64) -> Result<Self> {
        let obs = read_observations(path)?;
        let n = obs.x.len();
        let t_max = obs.x[n - 1];
        let grid = Grid::new(t_max, n)?;
        check_grid(&grid, &obs.x)?;
        let operator = build_convolution_operator(|x| kernel.eval(x), &grid);
        Ok(InverseProblem {
            grid,
            operator,
            f_true: obs.f_true.map(DVector::from_vec),
            y: DVector::from_vec(obs.y),
            sigma,
        })
    }
}

pub(crate) struct Observations {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub f_true: Option<Vec<f64>>,
}

pub(crate) fn read_observations(path: impl AsRef<Path>) -> Result<Observations> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_to_file(path, e))?;
    let headers = r.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let xi = col("x").ok_or_else(|| Error::Parse(format!("{}: missing column 'x'", path.display())))?;
    let yi = col("y").ok_or_else(|| Error::Parse(format!("{}: missing column 'y'", path.display())))?;
    let fi = col("f_true");
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut f = Vec::new();
    let mut f_complete = fi.is_some();
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| -> Result<f64> {
            rec.get(i)
                .map(str::trim)
                .unwrap_or("")
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
        };
        x.push(parse(xi)?);
        y.push(parse(yi)?);
        if let Some(fi) = fi {
            match rec.get(fi).map(str::trim) {
                Some(s) if !s.is_empty() => f.push(
                    s.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?,
                ),
                _ => f_complete = false,
            }
        }
    }
    if x.is_empty() {
        return Err(Error::Parse(format!("{}: no data rows", path.display())));
    }
    Ok(Observations {
        x,
        y,
        f_true: f_complete.then_some(f),
    })
}

pub(crate) fn check_grid(grid: &Grid, x: &[f64]) -> Result<()> {
    let tol = 1e-9 * grid.t_max();
    for (i, (&a, &b)) in grid.points().iter().zip(x).enumerate() {
        if (a - b).abs() > tol {
            return Err(Error::invalid(format!(
                "abscissa {i} is {b}, expected uniform grid value {a}"
            )));
        }
    }
    Ok(())
}

pub(crate) fn csv_to_file(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::file(path, io),
        other => Error::Parse(format!("{}: {other:?}", path.display())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn q_exact_f3(x: f64) -> f64 {
        2.0 * ((-x / 2.0).exp() - (-x).exp())
    }

    #[test]
    fn grid_layout() {
        let g = Grid::new(4.0, 8).unwrap();
        assert_eq!(g.points()[0], 0.5);
        assert_eq!(g.points()[7], 4.0);
        assert_eq!(g.step(), 0.5);
        assert!(Grid::new(0.0, 8).is_err());
        assert!(Grid::new(4.0, 0).is_err());
    }

    #[test]
    fn zero_kernel_gives_zero_operator() {
        let g = Grid::new(4.0, 16).unwrap();
        let q = build_convolution_operator(|_| 0.0, &g);
        assert!(q.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn operator_is_lower_triangular_with_positive_diagonal() {
        let g = Grid::new(4.0, 32).unwrap();
        let q = build_convolution_operator(|x| Kernel::Exp.eval(x), &g);
        for i in 0..32 {
            assert!(q[(i, i)] > 0.0);
            for j in i + 1..32 {
                assert_eq!(q[(i, j)], 0.0);
            }
        }
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let g = Grid::new(4.0, 64).unwrap();
        let q = build_convolution_operator(|x| Kernel::Exp.eval(x), &g);
        let f = evaluate_test_function(TestFunction::F3, &g);
        let exact = g.sample(q_exact_f3);
        let err = (&q * &f - exact).amax();
        assert!(err <= 5e-3, "max error {err}");
    }

    #[test]
    fn quadrature_is_second_order() {
        let errs: Vec<f64> = [32usize, 64, 128]
            .iter()
            .map(|&n| {
                let g = Grid::new(4.0, n).unwrap();
                let q = build_convolution_operator(|x| Kernel::Exp.eval(x), &g);
                let f = evaluate_test_function(TestFunction::F3, &g);
                (&q * &f - g.sample(q_exact_f3)).amax()
            })
            .collect();
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}, errors {errs:?}");
        }
    }

    #[test]
    fn linear_functions_integrate_up_to_first_cell() {
        // g = 1, f(t) = 1 + 2t: trapezoid is exact except for the t = 0 cell
        let g = Grid::new(2.0, 20).unwrap();
        let h = g.step();
        let q = build_convolution_operator(|_| 1.0, &g);
        let f = g.sample(|t| 1.0 + 2.0 * t);
        let qf = &q * &f;
        for (i, &x) in g.points().iter().enumerate() {
            let exact = x + x * x;
            let bound = h * (f[0] - 1.0).abs() + 1e-12;
            assert!((qf[i] - exact).abs() <= bound);
        }
    }

    #[test]
    fn test_function_values() {
        assert_relative_eq!(TestFunction::F3.eval(0.0), 1.0);
        assert_relative_eq!(TestFunction::F3.eval(2.0), (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(TestFunction::F1.eval(1.0), (-3.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(TestFunction::F2.eval(1.0), (-4.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(TestFunction::F1.eval(1.0), 0.049787068367863944, epsilon = 1e-15);
        assert!(TestFunction::from_id("f4").is_err());
    }

    #[test]
    fn sigma_from_snr_definition() {
        let t = 4.0;
        let q = DVector::from_element(16, (t / 16.0f64).sqrt());
        assert_relative_eq!(q.norm(), t.sqrt(), epsilon = 1e-14);
        assert_relative_eq!(sigma_from_snr(&q, 1.0, t).unwrap(), 1.0, epsilon = 1e-14);
        assert_relative_eq!(sigma_from_snr(&q, 2.0, t).unwrap(), 0.5, epsilon = 1e-14);
        assert!(sigma_from_snr(&DVector::zeros(4), 1.0, t).is_err());
        assert!(sigma_from_snr(&q, 0.0, t).is_err());
    }

    #[test]
    fn snr_reproduces_empirical_noise_scale() {
        let g = Grid::new(4.0, 32).unwrap();
        let q = build_convolution_operator(|x| Kernel::Exp.eval(x), &g);
        let f = evaluate_test_function(TestFunction::F1, &g);
        let qf = &q * &f;
        let sigma = sigma_from_snr(&qf, 3.0, 4.0).unwrap();
        let target = noise_scale(sigma, &g);
        let rms_q = qf.norm() / (32f64).sqrt();
        assert_relative_eq!(rms_q / target, 3.0, epsilon = 1e-12);

        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for seed in 0..(10_000 / 32 + 1) as u64 {
            let y = synthesize_observations(&q, &f, sigma, &g, seed).unwrap();
            for v in (y - &qf).iter() {
                sum_sq += v * v;
                count += 1;
            }
        }
        let std = (sum_sq / count as f64).sqrt();
        assert!((std / target - 1.0).abs() < 0.02, "std {std} vs {target}");
    }

    #[test]
    fn synthesis_noiseless_and_deterministic() {
        let g = Grid::new(4.0, 32).unwrap();
        let q = build_convolution_operator(|x| Kernel::Exp.eval(x), &g);
        let f = evaluate_test_function(TestFunction::F2, &g);
        let y0 = synthesize_observations(&q, &f, 0.0, &g, 3).unwrap();
        assert_eq!(y0, &q * &f);
        let a = synthesize_observations(&q, &f, 0.7, &g, 11).unwrap();
        let b = synthesize_observations(&q, &f, 0.7, &g, 11).unwrap();
        assert_eq!(a, b);
        let c = synthesize_observations(&q, &f, 0.7, &g, 12).unwrap();
        assert_ne!(a, c);
        assert!(synthesize_observations(&q, &DVector::zeros(5), 0.7, &g, 1).is_err());
    }

    #[test]
    fn noise_variance_matches_model() {
        // Var(y_i - (Qf)_i) = σ² T / n, pooled over coordinates and 10⁴ draws
        let g = Grid::new(4.0, 16).unwrap();
        let q = build_convolution_operator(|x| Kernel::Exp.eval(x), &g);
        let f = evaluate_test_function(TestFunction::F1, &g);
        let qf = &q * &f;
        let sigma = 0.3;
        let mut acc = 0.0;
        let draws = 10_000;
        for seed in 0..draws {
            let y = synthesize_observations(&q, &f, sigma, &g, seed).unwrap();
            acc += (y - &qf).norm_squared();
        }
        let var = acc / (draws as f64 * 16.0);
        let expected = sigma * sigma * 4.0 / 16.0;
        assert!((var / expected - 1.0).abs() < 0.03, "{var} vs {expected}");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let p = InverseProblem::simulate(
            Kernel::Exp,
            TestFunction::F1,
            Grid::new(4.0, 32).unwrap(),
            3.0,
            5,
        )
        .unwrap();
        p.write_csv(&path).unwrap();
        let back = InverseProblem::read_csv(&path, Kernel::Exp, p.sigma).unwrap();
        assert_eq!(back.y, p.y);
        assert_eq!(back.f_true, p.f_true);
        assert_eq!(back.grid, p.grid);
    }
}
