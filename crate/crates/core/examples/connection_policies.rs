//! Compares the one-frame connection transition matrices of the three admission policies.
//!
//! cargo run --example connection_policies

use cacq::connection::{acceptance_probability, connection_transition_matrix, CacPolicy, ConnectionLimits, ConnectionParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Short connections so the per-frame probabilities are visible.
    let params = ConnectionParams::new(600.0, 0.01, 1.0 / 60_000.0)?;
    let limits = ConnectionLimits::default();
    println!(
        "arrivals/frame {:.4}, departure probability {:.5}",
        params.arrivals_per_frame(),
        params.departure_probability()
    );
    let policies = [
        CacPolicy::Threshold { limit: 3 },
        CacPolicy::queue_aware_step(4, 8, 3),
        CacPolicy::NoCac { c_tr: 3 },
    ];
    for policy in &policies {
        println!("\n{policy}");
        for x in [0, 6] {
            let accept: Vec<f64> = (0..=3).map(|c| acceptance_probability(policy, x, c)).collect();
            println!("  queue {x}: accept by c = {accept:?}");
            let q = connection_transition_matrix(policy, x, &params, &limits);
            for c in 0..q.rows() {
                let row: Vec<String> = q.row(c).iter().map(|v| format!("{v:.5}")).collect();
                println!("    c={c}  [{}]", row.join(" "));
            }
        }
    }
    Ok(())
}
