//! Runs one of the bundled scenario files and prints the summary.
//!
//! `cargo run --example scenario -- scenarios/coherent_optical.toml`

use std::path::PathBuf;

use qbm::scenario::{load_config, run_scenario, validate_config};

fn main() -> qbm::Result<()> {
    let path = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/coherent_optical.toml")));
    let cfg = load_config(&path)?;
    for d in &validate_config(&cfg).diagnostics {
        println!("{d}");
    }
    let out = std::env::temp_dir().join("qbm-scenario-example");
    let summary = run_scenario(&cfg, Some(&out))?;
    for e in &summary.engines {
        println!("{:<14} {:8.3} s  final {:?}", e.engine.name(), e.runtime_s, e.final_moments);
    }
    for c in &summary.checks {
        println!("{} {} = {:.3e} (limit {:.1e})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.limit);
    }
    println!("outputs in {}", out.display());
    Ok(())
}
