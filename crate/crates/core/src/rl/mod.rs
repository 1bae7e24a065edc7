//! PPO and SAC trainers over the control environment.

mod ppo;
mod replay;
mod sac;

pub use ppo::{compute_gae, ppo_loss, ppo_train, PpoConfig, PpoLoss, PpoTrainer};
pub use replay::{ReplayBuffer, TransitionBatch};
pub use sac::{critic_loss, sac_target, sac_train, SacConfig, SacNets, SacStats, SacTrainer};

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{ControlEnv, EnvConfig, InitialAmplitude, Observation, StepOutcome};
use crate::error::{Error, Result};
use crate::fmt::f17;
use crate::measure;

/// Episodic environment with scalar actions.
pub trait Environment {
    fn reset(&mut self, seed: u64) -> Observation;
    fn step(&mut self, action: f64) -> Result<StepOutcome>;
    /// Figure of merit of the episode just finished.
    fn episode_score(&self) -> Result<f64>;
}

impl Environment for ControlEnv {
    fn reset(&mut self, seed: u64) -> Observation {
        ControlEnv::reset(self, seed)
    }

    fn step(&mut self, action: f64) -> Result<StepOutcome> {
        ControlEnv::step(self, action)
    }

    /// N_Tot of the episode's distance samples.
    fn episode_score(&self) -> Result<f64> {
        measure::n_total(self.distances(), self.config().propagation.bin_width())
    }
}

/// Training environment (random Ω₀) and evaluation environment (fixed Ω₀)
/// sharing one propagator.
pub fn env_pair(config: &EnvConfig, eval_omega0: f64) -> Result<(ControlEnv, ControlEnv)> {
    let train = ControlEnv::new(*config)?;
    let eval_config = config.with_initial_amplitude(InitialAmplitude::Fixed(eval_omega0));
    eval_config.validate()?;
    let eval = ControlEnv::with_propagator(eval_config, Arc::clone(train.propagator()));
    Ok((train, eval))
}

/// Runs one episode with a deterministic action map and returns its score.
pub fn evaluate<E, F>(env: &mut E, mut policy: F) -> Result<f64>
where
    E: Environment + ?Sized,
    F: FnMut(&Observation) -> Result<f64>,
{
    let mut obs = env.reset(0);
    loop {
        let out = env.step(policy(&obs)?)?;
        obs = out.observation;
        if out.done {
            return env.episode_score();
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub env_steps: u64,
    pub episodes: u64,
    pub updates: u64,
    pub eval_n_tot: f64,
}

/// Deterministic-evaluation scores against the three training counters.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceHistory {
    pub points: Vec<HistoryPoint>,
}

impl ConvergenceHistory {
    pub fn push(&mut self, p: HistoryPoint) -> Result<()> {
        if let Some(last) = self.points.last() {
            if p.env_steps < last.env_steps || p.episodes < last.episodes || p.updates < last.updates {
                return Err(Error::InvalidParameter("convergence counters must not decrease".into()));
            }
        }
        self.points.push(p);
        Ok(())
    }

    pub fn last(&self) -> Option<&HistoryPoint> {
        self.points.last()
    }

    /// CSV with header `env_steps,episodes,updates,eval_n_tot`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["env_steps", "episodes", "updates", "eval_n_tot"])?;
        for p in &self.points {
            w.write_record([p.env_steps.to_string(), p.episodes.to_string(), p.updates.to_string(), f17(p.eval_n_tot)])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scales `grads` in place so their joint norm is at most `max_norm`.
pub(crate) fn clip_grad_norm(grads: &mut [&mut [f64]], max_norm: Option<f64>) -> f64 {
    let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if let Some(m) = max_norm {
        if norm > m {
            let s = m / norm;
            grads.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v *= s));
        }
    }
    norm
}

pub(crate) fn diverged(step: u64, reason: impl Into<String>) -> Error {
    Error::Diverged {
        step,
        reason: reason.into(),
    }
}
