//! Inverse images, noise weights and the universal penalty for the Laplace
//! operator, plus a Monte Carlo check that `ν_j` tracks the noise in `b_j`.
//!
//!     cargo run --example preconditioning

use illposed::dictionary::default_laguerre_dictionary;
use illposed::precondition::{PreconditionedSystem, DEFAULT_TAU};
use illposed::problem::{noise_scale, Grid, InverseProblem, Kernel, TestFunction};
use illposed::rng::{self, standard_normal};
use nalgebra::DVector;

fn main() -> illposed::Result<()> {
    let grid = Grid::new(4.0, 64)?;
    let phi = default_laguerre_dictionary(&grid)?;
    let problem = InverseProblem::simulate(Kernel::Exp, TestFunction::F1, grid.clone(), 3.0, 0)?;
    let sys = PreconditionedSystem::new(&problem.operator, &phi, &problem.y, &grid, problem.sigma, DEFAULT_TAU)?;

    let sigma_eff = noise_scale(problem.sigma, &grid);
    println!("sigma_eff {sigma_eff:.4e}, alpha0 {:.4e}", sys.alpha0);
    println!("weights range [{:.3}, {:.3}]", sys.nu.min(), sys.nu.max());

    let draws = 4000;
    let atoms = [0, 12, 31, 63];
    let mut sq = [0.0; 4];
    let mut stream = rng::stream(1);
    for _ in 0..draws {
        let noise = DVector::from_fn(grid.len(), |_, _| sigma_eff * standard_normal(&mut stream));
        for (a, &j) in atoms.iter().enumerate() {
            sq[a] += sys.psi.column(j).dot(&noise).powi(2);
        }
    }
    let labels = phi.labels();
    println!("\n{:>12} {:>12} {:>12}", "atom", "sigma*nu", "sample std");
    for (a, &j) in atoms.iter().enumerate() {
        println!("{:>12} {:>12.4e} {:>12.4e}", labels[j], sigma_eff * sys.nu[j], (sq[a] / draws as f64).sqrt());
    }
    Ok(())
}
