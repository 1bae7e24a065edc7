//! Simulation and control of information backflow for a driven qubit coupled
//! to a Lorentzian reservoir.
//!
//! * [`dynamics`]: decay rate, master equation and fixed-step propagation.
//! * [`measure`]: trace distance and the BLP non-Markovianity functionals.
//! * [`pulse`]: piecewise-constant control fields.
//! * [`oct`]: Powell and L-BFGS-B maximization of the total backflow.
//! * [`nn`]: small dense networks, Gaussian policy heads and Adam.
//! * [`env`]: the episodic control environment.
//! * [`rl`]: PPO and SAC trainers.
//! * [`experiment`]: run configuration, output files and method reports.

pub mod dynamics;
pub mod env;
pub mod error;
pub mod experiment;
pub mod fmt;
pub mod measure;
pub mod nn;
pub mod oct;
pub mod pulse;
pub mod rl;

pub use dynamics::{
    amplitude_zeros, decay_rate, negativity_windows, propagate_pair, survival_amplitude, DensityMatrix, Integrator,
    Mat2, PositivityCheck, PropagationConfig, Propagator, ReservoirParams,
};
pub use error::{Error, Result};
pub use measure::{n_loc_series, n_total, trace_distance, TrajectoryRecord};
pub use pulse::{apply_increment, random_pulse, Bounds, Pulse};
