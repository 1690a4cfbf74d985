//! Recovers a signal from noisy Laplace-convolution data with the
//! data-driven weighted Lasso and compares it with the truth.
//!
//!     cargo run --example deconvolve -- f2 64 3

use illposed::dictionary::default_laguerre_dictionary;
use illposed::problem::{noise_scale, rms_error, Grid, InverseProblem, Kernel, TestFunction};
use illposed::select::{lasso_cv, LassoCvOptions};

fn main() -> illposed::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let func = TestFunction::from_id(args.first().map_or("f1", String::as_str))?;
    let n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(64);
    let snr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3.0);

    let grid = Grid::new(4.0, n)?;
    let problem = InverseProblem::simulate(Kernel::Exp, func, grid.clone(), snr, 7)?;
    let phi = default_laguerre_dictionary(&grid)?;
    let fit = lasso_cv(&problem, &phi, None, noise_scale(problem.sigma, &grid), &LassoCvOptions::default())?;

    let truth = problem.f_true.as_ref().expect("simulated");
    let chosen = fit.selected();
    println!("{} n={n} snr={snr} sigma={:.4e}", func.id(), problem.sigma);
    println!(
        "selected alpha {:.4e} (path point {} of {}), {} atoms",
        chosen.alpha,
        fit.selection.k_hat + 1,
        fit.path.len(),
        chosen.sparsity()
    );
    let labels = phi.labels();
    for &j in &chosen.support {
        println!("  {:>12}  {:+.5}", labels[j], chosen.theta[j]);
    }
    println!("error {:.6}", rms_error(&fit.f_hat, truth));
    println!("\n     x      f_true     f_hat");
    for (i, x) in grid.points().iter().enumerate().step_by((n / 16).max(1)) {
        println!("{x:6.3}  {:9.5}  {:9.5}", truth[i], fit.f_hat[i]);
    }
    Ok(())
}
