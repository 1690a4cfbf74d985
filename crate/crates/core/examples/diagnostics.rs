//! Restricted eigenvalues, a compatibility estimate and the condition report
//! for a Gaussian dictionary.
//!
//!     cargo run --release --example diagnostics

use illposed::diagnostics::{
    check_theorem1_conditions, compatibility_lower_bound, restricted_eigenvalue_probe, restricted_eigenvalues,
    sample_size_requirement, Theorem1Options,
};
use illposed::dictionary::{build_random_dictionary, RandomKind};
use illposed::lasso::{weighted_lasso, SolverOptions};
use illposed::rng::{self, derive_seed, standard_normal};
use nalgebra::DVector;

fn main() -> illposed::Result<()> {
    let small = build_random_dictionary(RandomKind::Rows, 64, 20, 2)?;
    for m in 1..=4 {
        let (lo, hi) = restricted_eigenvalues(&small, m)?;
        let (plo, phi) = restricted_eigenvalue_probe(&small, m, 200, 9)?;
        println!("m={m}: exhaustive [{lo:.4}, {hi:.4}]  probe [{plo:.4}, {phi:.4}]");
    }

    let (n, p) = (128, 256);
    let phi = build_random_dictionary(RandomKind::Rows, n, p, 3)?;
    let nu = DVector::from_element(p, 1.0);
    let kappa = compatibility_lower_bound(&phi, &nu, 3.0, &[0, 5, 9], 64, 4)?;
    println!("\ncompatibility estimate on J = {{0, 5, 9}}: {kappa:.4}");
    println!("sample size needed for s = 4, delta = 0.5: {:.1}", sample_size_requirement(p, 4, 0.5, 1.0));

    let mut theta = DVector::zeros(p);
    theta[3] = 1.0;
    theta[40] = -0.5;
    let f = phi.synthesize(&theta);
    let gram = phi.matrix().tr_mul(phi.matrix());
    let sigma = 0.05;
    let alpha = sigma * (4.0 * (p as f64).ln() / n as f64).sqrt();
    let opts = Theorem1Options::new(4, 10, 0);
    let report = check_theorem1_conditions(&phi, &nu, &f, &opts, |seed| {
        let mut stream = rng::stream(derive_seed(0, seed));
        let y = DVector::from_fn(n, |i, _| f[i] + sigma * standard_normal(&mut stream));
        let b = phi.matrix().tr_mul(&y);
        weighted_lasso(&gram, &b, &nu, alpha, &DVector::zeros(p), SolverOptions::default())
    })?;
    println!("\n{}", report.to_json()?);
    Ok(())
}
