//! L-BFGS-B from the zero pulse and from a seeded random pulse.
//!
//! The zero pulse is a stationary point (N_Tot is even in Ω), so the first
//! run stays at the uncontrolled value.

use backflow::oct::{lbfgsb_optimize, BackflowObjective, OctConfig};
use backflow::{random_pulse, Bounds, PropagationConfig, ReservoirParams};

fn main() -> backflow::Result<()> {
    let iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let config = OctConfig { max_iterations: iterations, ..OctConfig::lbfgsb() };
    let p = PropagationConfig::default();
    let starts = [
        ("zero", vec![0.0; p.control_bins]),
        ("random (seed 42)", random_pulse(42, Bounds::default(), p.control_bins, p.horizon)?.into_amplitudes()),
    ];
    for (label, x0) in starts {
        let obj = BackflowObjective::new(ReservoirParams::default(), p, Bounds::default())?;
        let start = obj.evaluate(&x0)?;
        let r = lbfgsb_optimize(|x| obj.evaluate(x), &x0, obj.bounds(), &config)?;
        println!(
            "{label}: N_Tot {start:.6} -> {:.6} after {} evaluations ({:?})",
            r.value,
            r.evaluations(),
            r.termination
        );
    }
    Ok(())
}
