//! Builds a two-phase batch arrival process and prints its per-frame count kernel.
//!
//! cargo run --example bmap_basics

use cacq::arrival::{aggregate_count_distribution, BatchArrivalProcess};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // 900 and 300 batches/min of 30 packets, switching 6 times a minute.
    let process = BatchArrivalProcess::mmpp2(900.0, 300.0, 6.0, 6.0, 30)?;
    let frame = 1.0 / 60_000.0;
    println!("phases            {}", process.num_phases());
    println!("stationary phase  {:?}", process.stationary_phase_distribution()?);
    println!("mean rate         {:.3} packets/min", process.mean_arrival_rate()?);

    let kernel = process.frame_count_kernel(frame, 50)?;
    println!(
        "uniformization    {} terms, tail {:.1e}",
        kernel.uniformization_steps(),
        kernel.truncated_mass()
    );
    for s in 0..kernel.num_phases() {
        let m = kernel.marginal(s);
        println!(
            "phase {s}: P(0) = {:.6}, P(30) = {:.3e}, mean {:.5} packets/frame",
            m[0],
            m[30],
            kernel.mean_count(s)
        );
    }

    // Total arrivals from three connections that share the phase.
    let three = aggregate_count_distribution(&kernel, 3);
    let busy: f64 = three.counts(0).iter().skip(1).sum();
    println!("three connections in phase 0: P(any arrival) = {busy:.3e}");
    Ok(())
}
