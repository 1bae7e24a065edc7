//! Total backflow under constant drives of increasing strength.

use backflow::oct::BackflowObjective;
use backflow::{Bounds, PropagationConfig, ReservoirParams};

fn main() -> backflow::Result<()> {
    let obj = BackflowObjective::new(ReservoirParams::default(), PropagationConfig::default(), Bounds::default())?;
    for omega in [0.0, 0.5, 1.0, 2.0, 3.0, 5.0] {
        let rec = obj.trajectory(&vec![omega; obj.dim()])?;
        println!(
            "Ω = {omega:.1}: N_Tot = {:.6}  support {:2}  projections {}",
            rec.n_total,
            rec.backflow_support(1e-6),
            rec.positivity_projections
        );
    }
    Ok(())
}
