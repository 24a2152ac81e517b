//! Solves the full-size scenario and prints the report.
//!
//! cargo run --release --example solve_full [path/to/scenario.toml]

use std::time::Instant;

use cacq::pipeline::analyze;
use cacq::scenario::Scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/full.toml").to_string());
    let scenario = Scenario::load(&path)?;
    let started = Instant::now();
    let analysis = analyze(&scenario)?;
    let space = analysis.model.chain.space();
    println!(
        "{} states, {} stored queue entries, solved in {:.1?}",
        space.len(),
        analysis.model.chain.nonzeros(),
        started.elapsed()
    );
    print!("{}", analysis.report.text_block());
    println!("mean served       {:.6} packets/frame", analysis.report.mean_served);
    Ok(())
}
