//! Undriven trace distance D(t) between |1⟩ and |0⟩ and its backflow.

use backflow::{DensityMatrix, PropagationConfig, Propagator, Pulse, ReservoirParams};

fn main() -> backflow::Result<()> {
    let config = PropagationConfig::default();
    for gamma in [0.3, 5.0] {
        let p = ReservoirParams::new(gamma, 1.0, 1.0)?;
        let pulse = Pulse::zeros(config.control_bins, Default::default(), config.horizon)?;
        let rec = Propagator::new(p, config)?.propagate_pair(&DensityMatrix::excited(), &DensityMatrix::ground(), &pulse)?;
        println!("Γ = {gamma}: N_Tot = {:.12}, {} backflow bins", rec.n_total, rec.backflow_support(1e-6));
        for k in (0..rec.len()).step_by(10) {
            println!("  t = {:.1}  D = {:.6}  N_loc = {:.6}", rec.times[k], rec.distances[k], rec.n_loc[k]);
        }
    }
    Ok(())
}
