use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{diverged, evaluate, ConvergenceHistory, Environment, HistoryPoint, ReplayBuffer, TransitionBatch};
use crate::env::{Observation, Transition, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Checkpoint, DenseNet, NetRecord, SquashedGaussianPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    /// Entropy temperature τ.
    pub temperature: f64,
    /// Target soft-update rate τ_target.
    pub target_rate: f64,
    pub gamma: f64,
    pub capacity: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub gradient_steps: usize,
    /// Uniform-random environment steps before learning starts.
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub hidden: Vec<usize>,
    /// Actions are squashed into ±action_limit.
    pub action_limit: f64,
    pub eval_interval: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            temperature: 0.2,
            target_rate: 0.005,
            gamma: 0.99,
            capacity: 300_000,
            batch: 256,
            learning_rate: 3e-4,
            gradient_steps: 1,
            warmup_steps: 1_000,
            total_steps: 500_000,
            hidden: vec![256, 256],
            action_limit: 5.0,
            eval_interval: 5_000,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if !(self.target_rate > 0.0 && self.target_rate <= 1.0) {
            return bad(format!("target_rate must lie in (0, 1], got {}", self.target_rate));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", self.gamma));
        }
        if self.batch == 0 || self.capacity < self.batch {
            return bad(format!("capacity {} must be at least the batch size {}", self.capacity, self.batch));
        }
        if !(self.learning_rate > 0.0) || !(self.action_limit > 0.0) || self.eval_interval == 0 {
            return bad("learning_rate, action_limit and eval_interval must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("invalid hidden sizes {:?}", self.hidden));
        }
        Ok(())
    }
}

/// y = r + γ (min_i Q̄_i(s', a') − τ log π(a'|s')), and y = r for terminal
/// transitions.
pub fn sac_target(rewards: &[f64], dones: &[bool], min_q_next: &[f64], log_prob_next: &[f64], temperature: f64, gamma: f64) -> Vec<f64> {
    rewards
        .iter()
        .zip(dones)
        .zip(min_q_next.iter().zip(log_prob_next))
        .map(|((r, done), (q, lp))| if *done { *r } else { r + gamma * (q - temperature * lp) })
        .collect()
}

/// Rows of [state, action].
fn state_actions(states: &[f64], actions: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(actions.len() * (OBS_DIM + 1));
    for (s, a) in states.chunks_exact(OBS_DIM).zip(actions) {
        out.extend_from_slice(s);
        out.push(*a);
    }
    out
}

/// Actor, twin critics and their targets.
#[derive(Clone, Debug, PartialEq)]
pub struct SacNets {
    pub actor: SquashedGaussianPolicy,
    pub q1: DenseNet,
    pub q2: DenseNet,
    pub q1_target: DenseNet,
    pub q2_target: DenseNet,
}

impl SacNets {
    pub fn new<R: Rng>(hidden: &[usize], action_limit: f64, rng: &mut R) -> Result<Self> {
        let actor = SquashedGaussianPolicy::new(OBS_DIM, 1, hidden, -action_limit, action_limit, rng)?;
        let sizes: Vec<usize> = std::iter::once(OBS_DIM + 1).chain(hidden.iter().copied()).chain([1]).collect();
        let q1 = DenseNet::orthogonal(&sizes, 1.0, rng)?;
        let q2 = DenseNet::orthogonal(&sizes, 1.0, rng)?;
        Ok(SacNets {
            actor,
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
        })
    }

    /// Policy loss mean(τ log π(a|s) − min_i Q_i(s, a)) with the
    /// reparameterized action for the given noise, and its actor gradient.
    pub fn policy_loss(&self, states: &[f64], noise: &[f64], temperature: f64) -> Result<(f64, Vec<f64>)> {
        let b = noise.len();
        let pi = self.actor.sample_batch(states, noise, b)?;
        let sa = state_actions(states, &pi.actions);
        let c1 = self.q1.forward_batch(&sa, b)?;
        let c2 = self.q2.forward_batch(&sa, b)?;
        let first: Vec<bool> = c1.output().iter().zip(c2.output()).map(|(a, c)| a <= c).collect();
        let mut loss = 0.0;
        for i in 0..b {
            let q = if first[i] { c1.output()[i] } else { c2.output()[i] };
            loss += temperature * pi.log_probs[i] - q;
        }
        let mask = |want: bool| first.iter().map(|f| if *f == want { 1.0 } else { 0.0 }).collect::<Vec<f64>>();
        let dx1 = self.q1.backward_batch(&c1, &mask(true), None)?;
        let dx2 = self.q2.backward_batch(&c2, &mask(false), None)?;
        let d_action: Vec<f64> = (0..b)
            .map(|i| -(dx1[i * (OBS_DIM + 1) + OBS_DIM] + dx2[i * (OBS_DIM + 1) + OBS_DIM]) / b as f64)
            .collect();
        let d_log_prob = vec![temperature / b as f64; b];
        let grads = self.actor.sample_backward(&pi, &d_action, &d_log_prob)?;
        Ok((loss / b as f64, grads))
    }
}

/// mean (Q(s, a) − y)² and its parameter gradient.
pub fn critic_loss(q: &DenseNet, state_actions: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let b = targets.len();
    let cache = q.forward_batch(state_actions, b)?;
    let diff: Vec<f64> = cache.output().iter().zip(targets).map(|(q, y)| q - y).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / b as f64;
    let upstream: Vec<f64> = diff.iter().map(|d| 2.0 * d / b as f64).collect();
    let mut grads = vec![0.0; q.num_params()];
    q.backward_batch(&cache, &upstream, Some(&mut grads))?;
    Ok((loss, grads))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SacStats {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub policy_loss: f64,
}

pub struct SacTrainer {
    config: SacConfig,
    pub nets: SacNets,
    actor_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    env_steps: u64,
    episodes: u64,
    updates: u64,
    history: ConvergenceHistory,
}

impl SacTrainer {
    pub fn new(config: SacConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets = SacNets::new(&config.hidden, config.action_limit, &mut rng)?;
        Ok(SacTrainer {
            actor_opt: AdamState::new(nets.actor.net.num_params(), config.learning_rate),
            q1_opt: AdamState::new(nets.q1.num_params(), config.learning_rate),
            q2_opt: AdamState::new(nets.q2.num_params(), config.learning_rate),
            buffer: ReplayBuffer::new(config.capacity)?,
            config,
            nets,
            rng,
            env_steps: 0,
            episodes: 0,
            updates: 0,
            history: ConvergenceHistory::default(),
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn history(&self) -> &ConvergenceHistory {
        &self.history
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn deterministic_action(&self, obs: &Observation) -> Result<f64> {
        Ok(self.nets.actor.deterministic(obs.as_slice())?[0])
    }

    pub fn evaluate<E: Environment + ?Sized>(&self, env: &mut E) -> Result<f64> {
        evaluate(env, |o| self.deterministic_action(o))
    }

    /// One critic, actor and target update on `batch`.
    pub fn update(&mut self, batch: &TransitionBatch) -> Result<SacStats> {
        let b = batch.len();
        let c = &self.config;
        let noise: Vec<f64> = (0..b).map(|_| self.rng.sample(StandardNormal)).collect();
        let next = self.nets.actor.sample_batch(&batch.next_states, &noise, b)?;
        let sa_next = state_actions(&batch.next_states, &next.actions);
        let t1 = self.nets.q1_target.forward_batch(&sa_next, b)?;
        let t2 = self.nets.q2_target.forward_batch(&sa_next, b)?;
        let min_q: Vec<f64> = t1.output().iter().zip(t2.output()).map(|(a, c)| a.min(*c)).collect();
        let y = sac_target(&batch.rewards, &batch.dones, &min_q, &next.log_probs, c.temperature, c.gamma);

        let sa = state_actions(&batch.states, &batch.actions);
        let (q1_loss, g1) = critic_loss(&self.nets.q1, &sa, &y)?;
        let (q2_loss, g2) = critic_loss(&self.nets.q2, &sa, &y)?;
        if !(q1_loss.is_finite() && q2_loss.is_finite()) {
            return Err(diverged(self.env_steps, "critic loss"));
        }
        self.q1_opt.step(self.nets.q1.params_mut(), &g1)?;
        self.q2_opt.step(self.nets.q2.params_mut(), &g2)?;

        let noise: Vec<f64> = (0..b).map(|_| self.rng.sample(StandardNormal)).collect();
        let (policy_loss, ga) = self.nets.policy_loss(&batch.states, &noise, c.temperature)?;
        if !policy_loss.is_finite() {
            return Err(diverged(self.env_steps, "policy loss"));
        }
        self.actor_opt.step(self.nets.actor.net.params_mut(), &ga)?;

        self.nets.q1.soft_update_into(&mut self.nets.q1_target, c.target_rate)?;
        self.nets.q2.soft_update_into(&mut self.nets.q2_target, c.target_rate)?;
        self.updates += 1;
        Ok(SacStats {
            q1_loss,
            q2_loss,
            policy_loss,
        })
    }

    fn record<E: Environment + ?Sized>(&mut self, eval_env: &mut E) -> Result<()> {
        let eval_n_tot = self.evaluate(eval_env)?;
        log::info!("sac steps {} episodes {} eval N_Tot {eval_n_tot:.6}", self.env_steps, self.episodes);
        self.history.push(HistoryPoint {
            env_steps: self.env_steps,
            episodes: self.episodes,
            updates: self.updates,
            eval_n_tot,
        })
    }

    fn run_episode<E: Environment + ?Sized>(&mut self, env: &mut E) -> Result<usize> {
        let seed = self.rng.random::<u64>();
        let mut obs = env.reset(seed);
        let lim = self.config.action_limit;
        let mut len = 0;
        loop {
            let action = if self.env_steps < self.config.warmup_steps {
                self.rng.random_range(-lim..lim)
            } else {
                self.nets.actor.sample(obs.as_slice(), &mut self.rng)?.0[0]
            };
            let out = env.step(action)?;
            self.buffer.push(Transition {
                state: obs,
                action,
                reward: out.reward,
                next_state: out.observation,
                done: out.done,
            });
            self.env_steps += 1;
            len += 1;
            if self.env_steps > self.config.warmup_steps && self.buffer.len() >= self.config.batch {
                for _ in 0..self.config.gradient_steps {
                    let batch = self.buffer.sample(self.config.batch, &mut self.rng)?;
                    self.update(&batch)?;
                }
            }
            obs = out.observation;
            if out.done {
                self.episodes += 1;
                return Ok(len);
            }
        }
    }

    /// Trains until the step budget is used up by whole episodes.
    pub fn train<E: Environment + ?Sized, V: Environment + ?Sized>(&mut self, env: &mut E, eval_env: &mut V) -> Result<()> {
        self.record(eval_env)?;
        let mut next_eval = self.env_steps + self.config.eval_interval;
        let mut episode_len = None;
        loop {
            if let Some(len) = episode_len {
                if self.env_steps + len as u64 > self.config.total_steps {
                    break;
                }
            } else if self.config.total_steps == 0 {
                break;
            }
            episode_len = Some(self.run_episode(env)?);
            if self.env_steps >= next_eval {
                self.record(eval_env)?;
                next_eval = self.env_steps + self.config.eval_interval;
            }
        }
        if self.history.last().map(|p| p.env_steps) != Some(self.env_steps) {
            self.record(eval_env)?;
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let (lo, hi) = self.nets.actor.range();
        Checkpoint::new(
            "sac",
            vec![
                NetRecord::from_net("actor", &self.nets.actor.net),
                NetRecord::from_vector("action_range", &[lo, hi]),
                NetRecord::from_net("q1", &self.nets.q1),
                NetRecord::from_net("q2", &self.nets.q2),
                NetRecord::from_net("q1_target", &self.nets.q1_target),
                NetRecord::from_net("q2_target", &self.nets.q2_target),
            ],
            &self.rng,
        )
    }

    pub fn policy_from_checkpoint(ckpt: &Checkpoint) -> Result<SquashedGaussianPolicy> {
        if ckpt.algorithm != "sac" {
            return Err(Error::InvalidParameter(format!("expected a sac checkpoint, got {}", ckpt.algorithm)));
        }
        let range = &ckpt.get("action_range")?.params;
        if range.len() != 2 {
            return Err(Error::InvalidParameter("malformed action range".into()));
        }
        SquashedGaussianPolicy::from_net(ckpt.get("actor")?.to_net()?, range[0], range[1])
    }
}

/// SAC from scratch; returns the trained actor and its evaluation history.
pub fn sac_train<E: Environment + ?Sized, V: Environment + ?Sized>(
    env: &mut E,
    eval_env: &mut V,
    config: &SacConfig,
    seed: u64,
) -> Result<(SquashedGaussianPolicy, ConvergenceHistory)> {
    let mut t = SacTrainer::new(config.clone(), seed)?;
    t.train(env, eval_env)?;
    Ok((t.nets.actor, t.history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_formula() {
        let y = sac_target(&[0.1, 0.1], &[false, true], &[1.0, 1.0], &[-0.5, -0.5], 0.2, 0.99);
        assert!((y[0] - 1.189).abs() < 1e-12);
        assert_eq!(y[1], 0.1);
        let y = sac_target(&[0.3], &[false], &[2.0], &[-7.0], 0.0, 0.5);
        assert_eq!(y[0], 0.3 + 0.5 * 2.0);
    }

    #[test]
    fn critic_loss_vanishes_at_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = DenseNet::orthogonal(&[OBS_DIM + 1, 8, 1], 1.0, &mut rng).unwrap();
        let sa: Vec<f64> = (0..3 * (OBS_DIM + 1)).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = q.forward_batch(&sa, 3).unwrap().output().to_vec();
        let (loss, grads) = critic_loss(&q, &sa, &y).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn frozen_targets_converge_geometrically() {
        let online = DenseNet::from_params(&[1, 1], vec![1.0, 1.0]).unwrap();
        let mut target = DenseNet::zeros(&[1, 1]).unwrap();
        online.soft_update_into(&mut target, 0.005).unwrap();
        assert!((target.params()[0] - 0.005).abs() < 1e-15);
        for k in 2..=1000 {
            online.soft_update_into(&mut target, 0.005).unwrap();
            let gap = 1.0 - target.params()[0];
            assert!((gap - 0.995f64.powi(k)).abs() < 1e-12);
        }
    }
}
