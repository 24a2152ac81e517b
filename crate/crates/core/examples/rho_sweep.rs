//! Connection-rate sweep at reduced buffer size, printed as CSV.
//!
//! cargo run --release --example rho_sweep

use cacq::connection::CacPolicy;
use cacq::metrics::CSV_HEADER;
use cacq::pipeline::analyze;
use cacq::scenario::Scenario;
use rayon::prelude::*;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut base = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/full.toml"))?;
    base.queue_cap = 100;
    let policies = [
        CacPolicy::Threshold { limit: 20 },
        CacPolicy::queue_aware_step(33, 100, 30),
        CacPolicy::NoCac { c_tr: 30 },
    ];
    let mut jobs = Vec::new();
    for p in &policies {
        for i in 1..=10 {
            jobs.push(base.with_policy(p.clone())?.with_connection_rate(i as f64 / 10.0)?);
        }
    }
    let rows = jobs
        .par_iter()
        .map(|s| analyze(s).map(|a| a.report.csv_row()))
        .collect::<Result<Vec<_>, _>>()?;
    println!("{CSV_HEADER}");
    for r in rows {
        println!("{r}");
    }
    Ok(())
}
