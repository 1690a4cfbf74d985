//! Builds each dictionary family and prints its shape and coherence.
//!
//!     cargo run --example dictionaries

use illposed::dictionary::{
    build_random_dictionary, build_structured_dictionary, build_tight_frame, default_laguerre_dictionary, Dictionary,
    RandomKind,
};
use illposed::problem::Grid;

fn coherence(d: &Dictionary) -> f64 {
    let g = d.matrix().tr_mul(d.matrix());
    let mut worst = 0.0_f64;
    for i in 0..d.p() {
        for j in 0..i {
            worst = worst.max(g[(i, j)].abs() / (g[(i, i)] * g[(j, j)]).sqrt());
        }
    }
    worst
}

fn main() -> illposed::Result<()> {
    let grid = Grid::new(4.0, 64)?;
    let frame = build_tight_frame(64, 96, 2.0)?;
    println!("tight frame 64x96, k = 2: |DDᵀ - k²I| = {:.2e}", frame.identity_defect());

    let dictionaries = [
        ("laguerre", default_laguerre_dictionary(&grid)?),
        ("gaussian rows", build_random_dictionary(RandomKind::Rows, 64, 128, 1)?),
        ("gaussian cols", build_random_dictionary(RandomKind::Cols, 64, 128, 1)?),
        ("structured", build_structured_dictionary(&frame, 128, 1)?),
    ];
    println!("{:<14} {:>4} {:>4} {:>10} {:>10}", "kind", "n", "p", "normalized", "coherence");
    for (name, d) in &dictionaries {
        println!("{name:<14} {:>4} {:>4} {:>10} {:>10.4}", d.n(), d.p(), d.is_normalized(), coherence(d));
    }
    println!("\nfirst Laguerre atoms: {:?}", &dictionaries[0].1.labels()[..6]);
    Ok(())
}
