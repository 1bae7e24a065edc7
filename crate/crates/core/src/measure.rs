//! Trace distance and the BLP non-Markovianity functionals.

use crate::dynamics::DensityMatrix;
use crate::error::{Error, Result};

/// ½‖ρ₁ − ρ₂‖₁, using the closed form sqrt(a² + |b|²) for the traceless
/// Hermitian difference with diagonal (a, −a) and off-diagonal b.
pub fn trace_distance(rho1: &DensityMatrix, rho2: &DensityMatrix) -> f64 {
    let delta = *rho1.matrix() - *rho2.matrix();
    let a = 0.5 * (delta.get(0, 0).re - delta.get(1, 1).re);
    let b = 0.5 * (delta.get(0, 1) + delta.get(1, 0).conj());
    (a * a + b.norm_sqr()).sqrt()
}

fn check_series(distances: &[f64], dt: f64) -> Result<()> {
    if distances.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 distance samples, got {}",
            distances.len()
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

/// Total non-Markovianity Σ_k max(0, D_{k+1} − D_k).
///
/// This is the left Riemann sum of the instantaneous rate, so it equals the
/// undiscounted, unregularized reward sum of an episode times Δt.
pub fn n_total(distances: &[f64], dt: f64) -> Result<f64> {
    check_series(distances, dt)?;
    Ok(distances
        .windows(2)
        .map(|w| (w[1] - w[0]).max(0.0))
        .sum())
}

/// Instantaneous rates max(0, (D_{k+1} − D_k)/Δt), one per interval.
pub fn n_loc_series(distances: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_series(distances, dt)?;
    Ok(distances
        .windows(2)
        .map(|w| ((w[1] - w[0]) / dt).max(0.0))
        .collect())
}

/// Sampled trajectory of a propagated state pair at the control-bin
/// boundaries t_0 = 0, …, t_{N_c} = T.
///
/// `ddot`, `n_loc` and `omega_samples` have one entry per boundary; the last
/// entry repeats the final interval. `n_total` sums only the N_c intervals.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub distances: Vec<f64>,
    pub ddot: Vec<f64>,
    pub gamma_samples: Vec<f64>,
    pub omega_samples: Vec<f64>,
    pub n_loc: Vec<f64>,
    pub n_total: f64,
    /// Smallest eigenvalue seen for either state during propagation.
    pub min_eigenvalue: f64,
    /// Number of trace renormalizations applied.
    pub trace_corrections: usize,
    /// Number of end-of-bin states projected back onto the density matrices.
    pub positivity_projections: usize,
}

impl TrajectoryRecord {
    pub fn from_samples(
        times: Vec<f64>,
        distances: Vec<f64>,
        gamma_samples: Vec<f64>,
        omega_samples: Vec<f64>,
        dt: f64,
    ) -> Result<Self> {
        let n = distances.len();
        for (name, len) in [
            ("times", times.len()),
            ("gamma samples", gamma_samples.len()),
            ("omega samples", omega_samples.len()),
        ] {
            if len != n {
                return Err(Error::ShapeMismatch {
                    context: name,
                    expected: n,
                    got: len,
                });
            }
        }
        let mut ddot: Vec<f64> = {
            check_series(&distances, dt)?;
            distances.windows(2).map(|w| (w[1] - w[0]) / dt).collect()
        };
        ddot.push(*ddot.last().unwrap());
        let n_loc = ddot.iter().map(|&v| v.max(0.0)).collect();
        let n_total = n_total(&distances, dt)?;
        Ok(TrajectoryRecord {
            times,
            distances,
            ddot,
            gamma_samples,
            omega_samples,
            n_loc,
            n_total,
            min_eigenvalue: f64::NAN,
            trace_corrections: 0,
            positivity_projections: 0,
        })
    }

    pub(crate) fn with_diagnostics(mut self, min_eigenvalue: f64, trace_corrections: usize, projections: usize) -> Self {
        self.min_eigenvalue = min_eigenvalue;
        self.trace_corrections = trace_corrections;
        self.positivity_projections = projections;
        self
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn bin_width(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// Number of intervals with N_loc above `threshold`.
    pub fn backflow_support(&self, threshold: f64) -> usize {
        self.n_loc[..self.n_loc.len() - 1]
            .iter()
            .filter(|&&v| v > threshold)
            .count()
    }
}
