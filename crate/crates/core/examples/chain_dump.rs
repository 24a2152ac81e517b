//! Builds a small frame chain, writes it in coordinate form and solves it three ways.
//!
//! cargo run --example chain_dump [out.txt]

use cacq::pipeline::Model;
use cacq::scenario::Scenario;
use cacq::solver::{solve_aggregated, solve_direct, solve_iterative, IterativeOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = Scenario::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/tiny.toml"))?;
    let model = Model::build(&scenario)?;
    let p = model.chain.assemble(usize::MAX)?;
    println!("{} states, {} nonzeros, fingerprint {}", p.dim(), p.nonzeros(), p.fingerprint());

    if let Some(path) = std::env::args().nth(1) {
        let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
        p.write_coordinates(&mut out)?;
        println!("wrote {path}");
    }

    let opts = IterativeOptions::default();
    let direct = solve_direct(&p, 5000)?;
    let power = solve_iterative(&p, &opts)?;
    let iad = solve_aggregated(&model.chain, &opts)?;
    for sol in [&direct, &power, &iad] {
        let gap = sol.pi.iter().zip(&direct.pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!(
            "{:<12} {:>7} iterations  residual {:.1e}  max gap to direct {:.1e}",
            sol.method, sol.iterations, sol.residual, gap
        );
    }
    Ok(())
}
