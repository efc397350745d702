//! The six-method sweep over a few seeds, rendered as a table.
//!
//! cargo run --release --example experiment_sweep [SEEDS]

use hierood::cli::{config_hash, render_table, run_experiment, ExperimentConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).map_or(Ok(3), |s| s.parse())?;
    let cfg = ExperimentConfig {
        seeds: (0..seeds).collect(),
        ..ExperimentConfig::default()
    };
    let outcome = run_experiment(&cfg, &config_hash(&cfg))?;
    print!("{}", render_table(&outcome.aggregate).to_text());
    for f in &outcome.failures {
        eprintln!("failed: {} seed {}: {}", f.method, f.seed, f.error);
    }
    Ok(())
}
