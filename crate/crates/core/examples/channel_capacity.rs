//! Frame capacity of a fading multi-subchannel link across average SNR.
//!
//! cargo run --example channel_capacity

use cacq::channel::{AmcTable, ChannelModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let amc = AmcTable::default();
    println!("SNR dB   E[R]   P(R=0)   E[min(R,10)]");
    for snr in (0..=20).step_by(5) {
        let model = ChannelModel::stochastic(5, snr as f64, 1.0, amc.clone())?;
        let cap = model.capacity_distribution()?;
        println!(
            "{snr:>6} {:>6.2} {:>8.2e} {:>12.3}",
            cap.mean(),
            cap.mass()[0],
            cap.expected_transmitted(10)
        );
    }
    let one = ChannelModel::stochastic(1, 5.0, 1.0, amc)?;
    println!("\nper-subchannel packets at 5 dB: {:?}", one.subchannel_rate_distribution()?);
    Ok(())
}
