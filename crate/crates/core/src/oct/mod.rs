//! Direct maximization of the total backflow over pulse amplitudes.

mod lbfgsb;
mod powell;

pub use lbfgsb::{lbfgsb_optimize, lbfgsb_optimize_with_gradient};
pub use powell::powell_optimize;

use std::cell::Cell;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{DensityMatrix, PropagationConfig, Propagator, ReservoirParams};
use crate::error::{Error, Result};
use crate::fmt::f17;
use crate::measure::TrajectoryRecord;
use crate::pulse::{Bounds, Pulse};

/// N_Tot of the excited/ground pair as a function of the amplitude vector.
#[derive(Debug)]
pub struct BackflowObjective {
    propagator: Propagator,
    bounds: Bounds,
    evaluations: Cell<u64>,
}

impl BackflowObjective {
    pub fn new(params: ReservoirParams, config: PropagationConfig, bounds: Bounds) -> Result<Self> {
        Ok(BackflowObjective {
            propagator: Propagator::new(params, config)?,
            bounds,
            evaluations: Cell::new(0),
        })
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    pub fn dim(&self) -> usize {
        self.propagator.config().control_bins
    }

    pub fn pulse(&self, amplitudes: &[f64]) -> Result<Pulse> {
        Pulse::new(amplitudes.to_vec(), self.bounds, self.propagator.config().horizon)
    }

    pub fn trajectory(&self, amplitudes: &[f64]) -> Result<TrajectoryRecord> {
        let pulse = self.pulse(amplitudes)?;
        self.evaluations.set(self.evaluations.get() + 1);
        self.propagator
            .propagate_pair(&DensityMatrix::excited(), &DensityMatrix::ground(), &pulse)
    }

    pub fn evaluate(&self, amplitudes: &[f64]) -> Result<f64> {
        Ok(self.trajectory(amplitudes)?.n_total)
    }

    /// Number of propagations performed so far.
    pub fn evaluations(&self) -> u64 {
        self.evaluations.get()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OctConfig {
    pub max_iterations: usize,
    /// Golden-section tolerance relative to the search interval width.
    pub line_search_tol: f64,
    /// Forward-difference step; defaults to 1e-3 of the bound width.
    pub fd_step: Option<f64>,
    pub gradient_tol: f64,
    pub objective_tol: f64,
    /// Powell stops when the net displacement is shorter than this.
    pub displacement_tol: f64,
    pub memory: usize,
}

impl Default for OctConfig {
    fn default() -> Self {
        OctConfig {
            max_iterations: 200,
            line_search_tol: 1e-4,
            fd_step: None,
            gradient_tol: 1e-8,
            objective_tol: 1e-10,
            displacement_tol: 1e-8,
            memory: 10,
        }
    }
}

impl OctConfig {
    pub fn powell() -> Self {
        OctConfig {
            max_iterations: 50,
            ..OctConfig::default()
        }
    }

    pub fn lbfgsb() -> Self {
        OctConfig::default()
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(eps) = self.fd_step {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::InvalidParameter(format!("finite-difference step must be positive, got {eps}")));
            }
        }
        if self.memory < 1 {
            return Err(Error::InvalidParameter("memory depth must be at least 1".into()));
        }
        if !(self.line_search_tol > 0.0 && self.line_search_tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "line-search tolerance must lie in (0, 1), got {}",
                self.line_search_tol
            )));
        }
        for (name, v) in [
            ("gradient", self.gradient_tol),
            ("objective", self.objective_tol),
            ("displacement", self.displacement_tol),
        ] {
            if !(v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} tolerance must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    pub fn fd_step_for(&self, bounds: &Bounds) -> f64 {
        self.fd_step.unwrap_or(1e-3 * bounds.width())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub value: f64,
    pub amplitudes: Vec<f64>,
    pub evaluations: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveHistory {
    pub entries: Vec<HistoryEntry>,
}

impl ObjectiveHistory {
    fn push(&mut self, iteration: usize, value: f64, x: &[f64], evaluations: u64) {
        self.entries.push(HistoryEntry {
            iteration,
            value,
            amplitudes: x.to_vec(),
            evaluations,
        });
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    /// CSV with header `iteration,n_tot,evals`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "n_tot", "evals"])?;
        for e in &self.entries {
            w.write_record([e.iteration.to_string(), f17(e.value), e.evaluations.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIterations,
    ObjectiveTolerance,
    DisplacementTolerance,
    GradientTolerance,
    LineSearchFailed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizationResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub history: ObjectiveHistory,
    pub termination: Termination,
}

impl OptimizationResult {
    pub fn evaluations(&self) -> u64 {
        self.history.entries.last().map_or(0, |e| e.evaluations)
    }

    /// JSON summary: final value, final amplitudes and termination reason.
    pub fn write_summary_json<W: Write>(&self, out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            final_n_tot: f64,
            final_amplitudes: &'a [f64],
            termination: Termination,
            iterations: usize,
            evaluations: u64,
        }
        serde_json::to_writer_pretty(
            out,
            &Summary {
                final_n_tot: self.value,
                final_amplitudes: &self.x,
                termination: self.termination,
                iterations: self.history.entries.last().map_or(0, |e| e.iteration),
                evaluations: self.evaluations(),
            },
        )?;
        Ok(())
    }
}

/// Objective wrapper that counts calls and rejects non-finite values.
pub(crate) struct Counted<F> {
    f: F,
    pub calls: u64,
}

impl<F: FnMut(&[f64]) -> Result<f64>> Counted<F> {
    pub fn new(f: F) -> Self {
        Counted { f, calls: 0 }
    }

    pub fn eval(&mut self, x: &[f64]) -> Result<f64> {
        self.calls += 1;
        let v = (self.f)(x)?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("objective value after {} evaluations", self.calls)));
        }
        Ok(v)
    }
}

pub(crate) fn check_start(x0: &[f64], bounds: &Bounds) -> Result<()> {
    if x0.is_empty() {
        return Err(Error::InvalidParameter("empty control vector".into()));
    }
    if let Some((j, v)) = x0.iter().enumerate().find(|(_, v)| !bounds.contains(**v)) {
        return Err(Error::OutOfBounds(format!(
            "initial amplitude {v} in bin {j} outside [{}, {}]",
            bounds.min, bounds.max
        )));
    }
    Ok(())
}

/// Golden-section maximization of `f` on [lo, hi] to a tolerance of
/// `rel_tol · (hi − lo)`. Returns the best probed point and its value; a
/// zero-width interval returns (0, f(0)).
pub fn line_search_1d<F: FnMut(f64) -> Result<f64>>(mut f: F, lo: f64, hi: f64, rel_tol: f64) -> Result<(f64, f64)> {
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::InvalidParameter(format!("invalid line-search interval [{lo}, {hi}]")));
    }
    if hi == lo {
        return Ok((0.0_f64.clamp(lo, hi), f(0.0_f64.clamp(lo, hi))?));
    }
    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let tol = rel_tol * (hi - lo);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    let mut best = if fd > fc { (d, fd) } else { (c, fc) };
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c)?;
            if fc > best.1 {
                best = (c, fc);
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d)?;
            if fd > best.1 {
                best = (d, fd);
            }
        }
    }
    // The interior probes never reach the ends; check them so boundary
    // maximizers are recovered exactly.
    for end in [lo, hi] {
        let v = f(end)?;
        if v > best.1 {
            best = (end, v);
        }
    }
    Ok(best)
}

/// Forward differences (f(clip(x + ε e_j)) − f(x)) / ε; N + 1 evaluations.
pub fn fd_gradient<F: FnMut(&[f64]) -> Result<f64>>(mut f: F, x: &[f64], eps: f64, bounds: &Bounds) -> Result<Vec<f64>> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("finite-difference step must be positive, got {eps}")));
    }
    let f0 = f(x)?;
    fd_gradient_at(&mut f, x, f0, eps, bounds)
}

pub(crate) fn fd_gradient_at<F: FnMut(&[f64]) -> Result<f64>>(f: &mut F, x: &[f64], f0: f64, eps: f64, bounds: &Bounds) -> Result<Vec<f64>> {
    let mut probe = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        probe[j] = bounds.clip(x[j] + eps);
        g.push((f(&probe)? - f0) / eps);
        probe[j] = x[j];
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_cases() {
        let (l, v) = line_search_1d(|l| Ok(-(l - 0.3) * (l - 0.3)), -1.0, 1.0, 1e-4).unwrap();
        assert!((l - 0.3).abs() < 1e-3 && v <= 0.0);
        let mut calls = 0;
        let (l, v) = line_search_1d(
            |l| {
                calls += 1;
                Ok(l + 2.0)
            },
            0.0,
            0.0,
            1e-4,
        )
        .unwrap();
        assert_eq!((l, v, calls), (0.0, 2.0, 1));
        let (l, _) = line_search_1d(|l| Ok(l.exp()), 0.0, 1.0, 1e-4).unwrap();
        assert_eq!(l, 1.0);
        assert!(line_search_1d(|l| Ok(l), 1.0, 0.0, 1e-4).is_err());
    }

    #[test]
    fn line_search_stays_feasible() {
        let (lo, hi) = (-0.7, 2.2);
        line_search_1d(
            |l| {
                assert!((lo..=hi).contains(&l));
                Ok((3.0 * l).sin())
            },
            lo,
            hi,
            1e-4,
        )
        .unwrap();
    }

    #[test]
    fn forward_differences() {
        let b = Bounds::default();
        let g = fd_gradient(|x| Ok(x[0] * x[0]), &[1.0], 1e-3, &b).unwrap();
        assert!((g[0] - 2.001).abs() < 1e-9);
        let g = fd_gradient(|_| Ok(4.0), &[1.0, 2.0, 3.0], 1e-3, &b).unwrap();
        assert_eq!(g, vec![0.0; 3]);
        let mut calls = 0;
        let g = fd_gradient(
            |x| {
                calls += 1;
                Ok(x.iter().map(|v| v * v).sum())
            },
            &[1.0, 1.0],
            1e-4,
            &b,
        )
        .unwrap();
        assert_eq!(calls, 3);
        assert!(g.iter().all(|v| (v - 2.0001).abs() < 1e-8));
        // At the upper bound the clipped probe does not move.
        let g = fd_gradient(|x| Ok(x[0]), &[5.0], 1e-3, &b).unwrap();
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn objective_reference_values() {
        let zero = vec![0.0; 70];
        let markov = BackflowObjective::new(
            ReservoirParams::new(0.3, 1.0, 1.0).unwrap(),
            PropagationConfig::default(),
            Bounds::default(),
        )
        .unwrap();
        assert_eq!(markov.evaluate(&zero).unwrap(), 0.0);
        let strong = BackflowObjective::new(ReservoirParams::default(), PropagationConfig::default(), Bounds::default()).unwrap();
        let a = strong.evaluate(&zero).unwrap();
        assert!(a > 0.0);
        assert_eq!(a.to_bits(), strong.evaluate(&zero).unwrap().to_bits());
        assert_eq!(strong.evaluations(), 2);
        assert!(strong.evaluate(&[0.0; 3]).is_err());
        assert!(strong.evaluate(&[6.0; 70]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(OctConfig::default().validate().is_ok());
        let mut c = OctConfig::default();
        c.memory = 0;
        assert!(c.validate().is_err());
        let mut c = OctConfig::default();
        c.fd_step = Some(0.0);
        assert!(c.validate().is_err());
        assert_eq!(OctConfig::default().fd_step_for(&Bounds::default()), 1e-2);
    }
}
