//! Decay rate γ(t) in both regimes and its negativity windows.

use backflow::{decay_rate, negativity_windows, ReservoirParams};

fn main() -> backflow::Result<()> {
    for (label, gamma) in [("markovian", 0.3), ("strong coupling", 5.0)] {
        let p = ReservoirParams::new(gamma, 1.0, 1.0)?;
        let windows = negativity_windows(&p, 7.0, 2000)?;
        println!("{label} (Γ = {gamma}, regime {:?}): {} negativity windows", p.regime(), windows.len());
        for (a, b) in &windows {
            println!("  γ < 0 on [{a:.3}, {b:.3}]");
        }
        for t in [0.0, 0.5, 1.0, 2.0, 4.0, 6.0] {
            println!("  γ({t:.1}) = {:+.5}", decay_rate(&p, t)?);
        }
    }
    Ok(())
}
