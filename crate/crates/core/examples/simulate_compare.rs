//! Simulates a scenario and checks every metric against the analytic solution.
//!
//! cargo run --release --example simulate_compare [path/to/scenario.toml]

use cacq::pipeline::analyze;
use cacq::scenario::Scenario;
use cacq::sim::{compare, simulate, SimConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/small.toml").to_string());
    let scenario = Scenario::load(&path)?;
    let analysis = analyze(&scenario)?;
    let estimate = simulate(&SimConfig::from_scenario(&scenario)?)?;
    print!("{}", estimate.text_block());
    let cmp = compare(&analysis.report, &estimate)?;
    print!("{}", cmp.table());
    for c in &estimate.replications {
        assert!(c.packets_balance() && c.connections_balance());
    }
    if !cmp.pass() {
        std::process::exit(3);
    }
    Ok(())
}
