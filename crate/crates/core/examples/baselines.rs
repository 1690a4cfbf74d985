//! Oracle-tuned truncated SVD and Laguerre expansions for every test function.
//!
//!     cargo run --example baselines

use illposed::baselines::{default_k_range, oracle_select, oracle_select_over_scales, Method, BASELINE_SCALES};
use illposed::problem::{Grid, InverseProblem, Kernel, TestFunction};

fn main() -> illposed::Result<()> {
    let n = 32;
    let ks = default_k_range(n);
    println!("{:<4} {:>8} {:>6} {:>10}", "fn", "method", "K", "error");
    for func in TestFunction::ALL {
        let problem = InverseProblem::simulate(Kernel::Exp, func, Grid::new(4.0, n)?, 3.0, 5)?;
        for method in [Method::Svd, Method::Laguerre] {
            let est = oracle_select(method, &problem, &ks, 1.0)?;
            println!("{:<4} {:>8} {:>6} {:>10.6}", func.id(), format!("{method:?}").to_lowercase(), est.tuning, est.error.unwrap_or(f64::NAN));
        }
        let est = oracle_select_over_scales(&problem, &ks, &BASELINE_SCALES)?;
        println!(
            "{:<4} {:>8} {:>6} {:>10.6}  (scale {})",
            func.id(),
            "lag-b",
            est.tuning,
            est.error.unwrap_or(f64::NAN),
            est.scale.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
