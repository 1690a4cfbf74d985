//! Runs a grid of benchmark cells and prints the table. With a JSON config
//! path it runs that single cell instead.
//!
//!     cargo run --release --example table1 -- 20
//!     cargo run --release --example table1 -- crates/core/examples/table1_f1_n32_snr5.json

use illposed::bench::{emit_tables, run_experiment, ExperimentConfig, TableFormat};
use illposed::problem::TestFunction;

fn main() -> illposed::Result<()> {
    let arg = std::env::args().nth(1);
    let configs: Vec<ExperimentConfig> = match arg.as_deref() {
        Some(path) if path.ends_with(".json") => vec![ExperimentConfig::load(path)?],
        other => {
            let reps = other.and_then(|s| s.parse().ok()).unwrap_or(100);
            let mut cells = Vec::new();
            for func in TestFunction::ALL {
                for n in [32, 64] {
                    for snr in [1.0, 3.0, 5.0] {
                        let mut c = ExperimentConfig::new(func, n, snr);
                        c.replications = reps;
                        cells.push(c);
                    }
                }
            }
            cells
        }
    };
    let reports = configs.into_iter().map(run_experiment).collect::<illposed::Result<Vec<_>>>()?;
    print!("{}", emit_tables(&reports, TableFormat::Markdown));
    Ok(())
}
