//! Replays a bundled scenario (services, owners, a timeline, expectations)
//! deterministically and prints the summary.
//!
//! `cargo run -p privsphere --example run_scenario [file.scenario]`

use std::path::PathBuf;

use privsphere::scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/assisted_living.scenario")
    });
    let s = scenario::load_scenario(&path)?;
    let report = scenario::run_scenario(&s)?;
    for step in &report.steps {
        println!("{}", serde_json::to_string(step)?);
    }
    println!("{}", serde_json::to_string(&report.summary)?);
    Ok(())
}
