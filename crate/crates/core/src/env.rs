//! Episodic control environment: each step increments the drive amplitude,
//! propagates the excited/ground pair over one bin and rewards backflow.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{decay_rate, DensityMatrix, PropagationConfig, Propagator, ReservoirParams};
use crate::error::{Error, Result};
use crate::fmt::f17;
use crate::measure::{trace_distance, TrajectoryRecord};
use crate::pulse::{apply_increment, uniform, Bounds, Pulse};

pub const OBS_DIM: usize = 5;

/// s_k = [t_k/T, D_k, Ḋ_{k−1}, γ_k, Ω_k]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn normalized_time(&self) -> f64 {
        self.0[0]
    }
    pub fn distance(&self) -> f64 {
        self.0[1]
    }
    pub fn prev_slope(&self) -> f64 {
        self.0[2]
    }
    pub fn decay_rate(&self) -> f64 {
        self.0[3]
    }
    pub fn amplitude(&self) -> f64 {
        self.0[4]
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// How Ω₀ is chosen at reset.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode", content = "value")]
pub enum InitialAmplitude {
    /// Uniform in bounds, drawn from the reset seed.
    Random,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvConfig {
    pub params: ReservoirParams,
    pub propagation: PropagationConfig,
    pub bounds: Bounds,
    /// Weight of the squared applied increment penalty.
    pub alpha: f64,
    /// Weight of the squared amplitude penalty.
    pub beta: f64,
    pub initial_amplitude: InitialAmplitude,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            params: ReservoirParams::default(),
            propagation: PropagationConfig::default(),
            bounds: Bounds::default(),
            alpha: 0.0,
            beta: 0.0,
            initial_amplitude: InitialAmplitude::Random,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.propagation.validate()?;
        Bounds::new(self.bounds.min, self.bounds.max)?;
        if !(self.alpha >= 0.0 && self.beta >= 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "reward weights must be non-negative, got alpha = {}, beta = {}",
                self.alpha, self.beta
            )));
        }
        if let InitialAmplitude::Fixed(w) = self.initial_amplitude {
            if !self.bounds.contains(w) {
                return Err(Error::OutOfBounds(format!("initial amplitude {w} outside bounds")));
            }
        }
        Ok(())
    }

    /// Episode length N_t = N_c.
    pub fn episode_len(&self) -> usize {
        self.propagation.control_bins
    }

    pub fn with_initial_amplitude(mut self, init: InitialAmplitude) -> Self {
        self.initial_amplitude = init;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: f64,
    pub reward: f64,
    pub next_state: Observation,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct ControlEnv {
    config: EnvConfig,
    propagator: Arc<Propagator>,
    rho1: DensityMatrix,
    rho2: DensityMatrix,
    k: usize,
    omega: f64,
    obs: Observation,
    distances: Vec<f64>,
    amplitudes: Vec<f64>,
    slopes: Vec<f64>,
    rewards: Vec<f64>,
    started: bool,
}

impl ControlEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let propagator = Arc::new(Propagator::new(config.params, config.propagation)?);
        Ok(Self::with_propagator(config, propagator))
    }

    /// Shares an existing propagator; it must match `config`.
    pub fn with_propagator(config: EnvConfig, propagator: Arc<Propagator>) -> Self {
        ControlEnv {
            config,
            propagator,
            rho1: DensityMatrix::excited(),
            rho2: DensityMatrix::ground(),
            k: 0,
            omega: 0.0,
            obs: Observation([0.0; OBS_DIM]),
            distances: Vec::new(),
            amplitudes: Vec::new(),
            slopes: Vec::new(),
            rewards: Vec::new(),
            started: false,
        }
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn propagator(&self) -> &Arc<Propagator> {
        &self.propagator
    }

    pub fn observation(&self) -> Observation {
        self.obs
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    pub fn is_done(&self) -> bool {
        self.started && self.k == self.config.episode_len()
    }

    /// Starts an episode from ρ₁ = |1⟩⟨1|, ρ₂ = |0⟩⟨0|.
    pub fn reset(&mut self, seed: u64) -> Observation {
        self.omega = match self.config.initial_amplitude {
            InitialAmplitude::Fixed(w) => w,
            InitialAmplitude::Random => uniform(&mut ChaCha8Rng::seed_from_u64(seed), &self.config.bounds),
        };
        self.rho1 = DensityMatrix::excited();
        self.rho2 = DensityMatrix::ground();
        self.k = 0;
        let d0 = trace_distance(&self.rho1, &self.rho2);
        self.distances = vec![d0];
        self.amplitudes.clear();
        self.slopes.clear();
        self.rewards.clear();
        self.started = true;
        self.obs = Observation([0.0, d0, 0.0, 0.0, self.omega]);
        self.obs
    }

    pub fn step(&mut self, action: f64) -> Result<StepOutcome> {
        if !self.started || self.is_done() {
            return Err(Error::EpisodeDone);
        }
        if !action.is_finite() {
            return Err(Error::NonFinite("action".into()));
        }
        let prev = self.omega;
        let omega = apply_increment(prev, action, &self.config.bounds);
        self.propagator.advance_bin(&mut self.rho1, self.k, omega)?;
        self.propagator.advance_bin(&mut self.rho2, self.k, omega)?;
        let d = trace_distance(&self.rho1, &self.rho2);
        let dt = self.config.propagation.bin_width();
        let slope = (d - self.distances[self.k]) / dt;
        let applied = omega - prev;
        let reward = slope.max(0.0) - self.config.alpha * applied * applied - self.config.beta * omega * omega;
        self.k += 1;
        self.omega = omega;
        self.distances.push(d);
        self.amplitudes.push(omega);
        self.slopes.push(slope);
        self.rewards.push(reward);
        let n = self.config.episode_len();
        let t = self.config.propagation.boundary(self.k);
        let gamma = decay_rate(&self.config.params, t)?;
        self.obs = Observation([self.k as f64 / n as f64, d, slope, gamma, omega]);
        Ok(StepOutcome {
            observation: self.obs,
            reward,
            done: self.k == n,
        })
    }

    /// D_0..D_k of the current episode.
    pub fn distances(&self) -> &[f64] {
        &self.distances
    }

    /// Ω_1..Ω_k applied so far.
    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    /// Pulse applied in the finished episode.
    pub fn pulse(&self) -> Result<Pulse> {
        if !self.is_done() {
            return Err(Error::InvalidParameter("episode not finished".into()));
        }
        Pulse::new(self.amplitudes.clone(), self.config.bounds, self.config.propagation.horizon)
    }

    /// Boundary-sampled record of the finished episode.
    pub fn trajectory(&self) -> Result<TrajectoryRecord> {
        let pulse = self.pulse()?;
        let n = self.config.episode_len();
        let times: Vec<f64> = (0..=n).map(|k| self.config.propagation.boundary(k)).collect();
        let gamma = times
            .iter()
            .map(|&t| decay_rate(&self.config.params, t))
            .collect::<Result<Vec<_>>>()?;
        let mut omega = pulse.into_amplitudes();
        omega.push(*omega.last().unwrap());
        TrajectoryRecord::from_samples(times, self.distances.clone(), gamma, omega, self.config.propagation.bin_width())
    }

    /// Episode trace with header `k,t,Omega,D,Ddot,gamma,reward`, one row per
    /// step taken.
    pub fn write_episode_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["k", "t", "Omega", "D", "Ddot", "gamma", "reward"])?;
        for k in 0..self.k {
            let t = self.config.propagation.boundary(k);
            w.write_record([
                k.to_string(),
                f17(t),
                f17(self.amplitudes[k]),
                f17(self.distances[k]),
                f17(self.slopes[k]),
                f17(decay_rate(&self.config.params, t)?),
                f17(self.rewards[k]),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Anything that maps observations to scalar actions.
pub trait Controller {
    fn act(&mut self, obs: &Observation) -> Result<f64>;
}

impl<F: FnMut(&Observation) -> Result<f64>> Controller for F {
    fn act(&mut self, obs: &Observation) -> Result<f64> {
        self(obs)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub transitions: Vec<Transition>,
    pub n_total: f64,
}

impl Episode {
    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }
}

/// Runs one full episode from `reset(seed)`.
pub fn rollout<C: Controller + ?Sized>(controller: &mut C, env: &mut ControlEnv, seed: u64) -> Result<Episode> {
    let mut obs = env.reset(seed);
    let mut transitions = Vec::with_capacity(env.config.episode_len());
    loop {
        let action = controller.act(&obs)?;
        let out = env.step(action)?;
        transitions.push(Transition {
            state: obs,
            action,
            reward: out.reward,
            next_state: out.observation,
            done: out.done,
        });
        obs = out.observation;
        if out.done {
            break;
        }
    }
    let n_total = crate::measure::n_total(env.distances(), env.config.propagation.bin_width())?;
    Ok(Episode { transitions, n_total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::n_total;
    use rand::Rng;

    fn env(alpha: f64, beta: f64) -> ControlEnv {
        ControlEnv::new(EnvConfig {
            alpha,
            beta,
            ..EnvConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn reset_state() {
        let mut e = env(0.0, 0.0);
        let s = e.reset(3);
        assert_eq!(s.normalized_time(), 0.0);
        assert_eq!(s.distance(), 1.0);
        assert_eq!(s.prev_slope(), 0.0);
        assert_eq!(s.decay_rate(), 0.0);
        assert!(Bounds::default().contains(s.amplitude()));
        assert_eq!(e.reset(3), s);
        assert_ne!(e.reset(4), s);
    }

    #[test]
    fn stepping_past_the_end_fails() {
        let mut e = env(0.0, 0.0);
        assert!(matches!(e.step(0.0), Err(Error::EpisodeDone)));
        e.reset(0);
        for k in 0..70 {
            let out = e.step(0.1).unwrap();
            assert_eq!(out.done, k == 69);
        }
        assert!(matches!(e.step(0.0), Err(Error::EpisodeDone)));
    }

    #[test]
    fn regularized_reward_arithmetic() {
        let mut e = env(0.1, 0.02);
        e.reset(0);
        let prev = e.observation().amplitude();
        let out = e.step(0.7).unwrap();
        let omega = out.observation.amplitude();
        let slope = out.observation.prev_slope();
        let expected = slope.max(0.0) - 0.1 * (omega - prev).powi(2) - 0.02 * omega * omega;
        assert_eq!(out.reward, expected);
    }

    #[test]
    fn zero_action_reproduces_constant_pulse() {
        let cfg = EnvConfig::default().with_initial_amplitude(InitialAmplitude::Fixed(1.5));
        let mut e = ControlEnv::new(cfg).unwrap();
        let ep = rollout(&mut |_: &Observation| Ok(0.0), &mut e, 0).unwrap();
        assert_eq!(ep.transitions.len(), 70);
        let pulse = Pulse::new(vec![1.5; 70], Bounds::default(), 7.0).unwrap();
        let rec = e.propagator().propagate_pair(&DensityMatrix::excited(), &DensityMatrix::ground(), &pulse).unwrap();
        assert_eq!(rec.distances, e.distances());
        assert_eq!(e.trajectory().unwrap().distances, rec.distances);
        assert_eq!(ep.n_total, rec.n_total);
    }

    #[test]
    fn reward_sum_equals_n_total() {
        let mut e = env(0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..5 {
            let ep = rollout(&mut |_: &Observation| Ok(rng.random_range(-2.0..2.0)), &mut e, seed).unwrap();
            let dt = 0.1;
            let s: f64 = ep.transitions.iter().map(|t| t.reward * dt).sum();
            assert!((s - n_total(e.distances(), dt).unwrap()).abs() < 1e-12);
            assert!(ep.transitions.iter().all(|t| t.reward >= 0.0));
        }
    }

    #[test]
    fn episode_csv_layout() {
        let mut e = env(0.0, 0.0);
        rollout(&mut |_: &Observation| Ok(0.5), &mut e, 2).unwrap();
        let mut buf = Vec::new();
        e.write_episode_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("k,t,Omega,D,Ddot,gamma,reward\n"));
        assert_eq!(text.lines().count(), 71);
    }

    #[test]
    fn invalid_config() {
        let cfg = EnvConfig {
            alpha: -1.0,
            ..EnvConfig::default()
        };
        assert!(ControlEnv::new(cfg).is_err());
        let cfg = EnvConfig::default().with_initial_amplitude(InitialAmplitude::Fixed(9.0));
        assert!(ControlEnv::new(cfg).is_err());
    }
}
