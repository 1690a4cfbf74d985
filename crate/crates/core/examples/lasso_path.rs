//! Traces the weighted-Lasso path, selects a point with the Cp criterion and
//! shows how the oracle-best point compares.
//!
//!     cargo run --example lasso_path

use illposed::dictionary::default_laguerre_dictionary;
use illposed::lasso::{lasso_path, SolverOptions, Start};
use illposed::precondition::{PreconditionedSystem, DEFAULT_TAU};
use illposed::problem::{noise_scale, rms_error, Grid, InverseProblem, Kernel, TestFunction};
use illposed::select::{cp_select, estimate_f, pilot_estimate_q};

fn main() -> illposed::Result<()> {
    let grid = Grid::new(4.0, 32)?;
    let phi = default_laguerre_dictionary(&grid)?;
    let problem = InverseProblem::simulate(Kernel::Exp, TestFunction::F1, grid.clone(), 5.0, 3)?;
    let truth = problem.f_true.as_ref().expect("simulated");
    let q = &problem.operator;
    let sys = PreconditionedSystem::new(q, &phi, &problem.y, &grid, problem.sigma, DEFAULT_TAU)?;

    let path = lasso_path(&sys.gram, &sys.b, &sys.nu, 50, SolverOptions::default(), Start::Warm)?;
    let sigma_eff = noise_scale(problem.sigma, &grid);
    let pilot = pilot_estimate_q(&problem.y, sigma_eff)?;
    let sel = cp_select(&path, q, &phi, &pilot.q_hat, sigma_eff)?;

    println!("{:>4} {:>11} {:>5} {:>11} {:>9}", "k", "alpha", "atoms", "Cp", "error");
    let mut best = (usize::MAX, f64::INFINITY);
    for (k, fit) in path.fits.iter().enumerate() {
        let err = rms_error(&estimate_f(fit, &phi)?, truth);
        if err < best.1 {
            best = (k, err);
        }
        if k % 5 == 0 || k == sel.k_hat {
            let mark = if k == sel.k_hat { " <- Cp" } else { "" };
            println!(
                "{k:>4} {:>11.4e} {:>5} {:>11.4e} {err:>9.6}{mark}",
                fit.alpha,
                fit.sparsity(),
                sel.criterion_values[k]
            );
        }
    }
    println!("\noracle-best point {} with error {:.6}", best.0, best.1);
    Ok(())
}
