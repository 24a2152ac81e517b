//! Blocking and dropping against average SNR for the three policies.
//!
//! cargo run --release --example snr_sweep

use cacq::connection::CacPolicy;
use cacq::pipeline::analyze;
use cacq::scenario::Scenario;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut base = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/full.toml"))?;
    base.queue_cap = 100;
    let policies = [
        CacPolicy::Threshold { limit: 20 },
        CacPolicy::queue_aware_step(33, 100, 30),
        CacPolicy::NoCac { c_tr: 30 },
    ];
    println!("{:<24} {:>4} {:>9} {:>9} {:>8}", "policy", "dB", "p_block", "p_drop", "delay");
    for p in &policies {
        let s = base.with_policy(p.clone())?;
        for snr in (0..=15).step_by(3) {
            let r = analyze(&s.with_avg_snr_db(snr as f64)?)?.report;
            println!(
                "{:<24} {snr:>4} {:>9.5} {:>9.5} {:>8.2}",
                r.policy,
                r.p_block,
                r.p_drop,
                r.delay.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}
