//! Powell pulse optimization from the zero pulse.
//!
//! `cargo run --release --example powell -- [iterations]` (default 5; 50 takes about half a minute).

use backflow::oct::{powell_optimize, BackflowObjective, OctConfig};
use backflow::{Bounds, PropagationConfig, ReservoirParams};

fn main() -> backflow::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let obj = BackflowObjective::new(ReservoirParams::default(), PropagationConfig::default(), Bounds::default())?;
    let config = OctConfig { max_iterations: iterations, ..OctConfig::powell() };
    let r = powell_optimize(|x| obj.evaluate(x), &vec![0.0; obj.dim()], obj.bounds(), &config)?;
    for e in &r.history.entries {
        println!("iteration {:3}  N_Tot {:.6}  evaluations {}", e.iteration, e.value, e.evaluations);
    }
    println!("termination {:?}", r.termination);
    let amps: Vec<String> = r.x.iter().map(|a| format!("{a:+.2}")).collect();
    println!("pulse: {}", amps.join(" "));
    Ok(())
}
