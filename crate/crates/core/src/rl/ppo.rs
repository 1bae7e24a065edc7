use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clip_grad_norm, diverged, evaluate, ConvergenceHistory, Environment, HistoryPoint};
use crate::env::{Observation, OBS_DIM};
use crate::error::{Error, Result};
use crate::nn::{AdamState, Checkpoint, DenseNet, GaussianPolicy, NetRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_eps: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    /// Episodes collected per policy iteration.
    pub rollout_episodes: usize,
    pub total_steps: u64,
    pub entropy_coef: f64,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
    pub max_grad_norm: Option<f64>,
    /// Sampled increments are clipped to ±action_limit before stepping.
    pub action_limit: f64,
    /// Environment steps between deterministic evaluations.
    pub eval_interval: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_eps: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            epochs: 10,
            minibatch: 64,
            learning_rate: 6e-4,
            rollout_episodes: 8,
            total_steps: 500_000,
            entropy_coef: 0.0,
            hidden: vec![64, 64],
            init_log_std: 0.0,
            max_grad_norm: Some(0.5),
            action_limit: 5.0,
            eval_interval: 5_000,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return bad(format!("clip_eps must lie in (0, 1), got {}", self.clip_eps));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]".into());
        }
        if self.epochs == 0 || self.minibatch == 0 || self.rollout_episodes == 0 || self.eval_interval == 0 {
            return bad("epochs, minibatch, rollout_episodes and eval_interval must be positive".into());
        }
        if !(self.learning_rate > 0.0) || !(self.action_limit > 0.0) || !(self.entropy_coef >= 0.0) {
            return bad("learning_rate and action_limit must be positive, entropy_coef non-negative".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("invalid hidden sizes {:?}", self.hidden));
        }
        Ok(())
    }
}

/// GAE advantages and returns for one finished episode.
///
/// `values` holds V(s_0..s_{n−1}) plus the bootstrap value of the final
/// state (0 for a terminal state).
pub fn compute_gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if values.len() != rewards.len() + 1 {
        return Err(Error::ShapeMismatch {
            context: "gae values",
            expected: rewards.len() + 1,
            got: values.len(),
        });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for k in (0..n).rev() {
        let delta = rewards[k] + gamma * values[k + 1] - values[k];
        acc = delta + gamma * lambda * acc;
        adv[k] = acc;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Clipped surrogate and its derivative with respect to each log π.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoLoss {
    /// mean min(r·A, clip(r, 1−ε, 1+ε)·A)
    pub objective: f64,
    /// mean r·A
    pub unclipped: f64,
    /// ∂objective/∂log π_i
    pub weights: Vec<f64>,
    pub clip_fraction: f64,
}

pub fn ppo_loss(log_probs: &[f64], old_log_probs: &[f64], advantages: &[f64], clip_eps: f64) -> Result<PpoLoss> {
    let n = log_probs.len();
    for (context, len) in [("old log-probs", old_log_probs.len()), ("advantages", advantages.len())] {
        if len != n {
            return Err(Error::ShapeMismatch {
                context,
                expected: n,
                got: len,
            });
        }
    }
    if n == 0 {
        return Err(Error::InvalidParameter("empty PPO batch".into()));
    }
    let mut objective = 0.0;
    let mut unclipped = 0.0;
    let mut clipped = 0usize;
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let r = (log_probs[i] - old_log_probs[i]).exp();
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("probability ratio of sample {i}")));
        }
        let a = advantages[i];
        let plain = r * a;
        let cut = r.clamp(1.0 - clip_eps, 1.0 + clip_eps) * a;
        if plain <= cut {
            weights[i] = plain / n as f64;
        } else {
            clipped += 1;
        }
        objective += plain.min(cut);
        unclipped += plain;
    }
    Ok(PpoLoss {
        objective: objective / n as f64,
        unclipped: unclipped / n as f64,
        weights,
        clip_fraction: clipped as f64 / n as f64,
    })
}

/// Rollout storage for one policy iteration.
#[derive(Default)]
struct Rollout {
    obs: Vec<f64>,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
}

/// PPO state: networks, optimizers, RNG stream and counters.
pub struct PpoTrainer {
    config: PpoConfig,
    pub policy: GaussianPolicy,
    pub value: DenseNet,
    policy_opt: AdamState,
    log_std_opt: AdamState,
    value_opt: AdamState,
    rng: ChaCha8Rng,
    env_steps: u64,
    episodes: u64,
    updates: u64,
    history: ConvergenceHistory,
}

impl PpoTrainer {
    pub fn new(config: PpoConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = GaussianPolicy::new(OBS_DIM, 1, &config.hidden, config.init_log_std, &mut rng)?;
        let sizes: Vec<usize> = std::iter::once(OBS_DIM).chain(config.hidden.iter().copied()).chain([1]).collect();
        let value = DenseNet::orthogonal(&sizes, 1.0, &mut rng)?;
        Ok(PpoTrainer {
            policy_opt: AdamState::new(policy.net.num_params(), config.learning_rate),
            log_std_opt: AdamState::new(1, config.learning_rate),
            value_opt: AdamState::new(value.num_params(), config.learning_rate),
            config,
            policy,
            value,
            rng,
            env_steps: 0,
            episodes: 0,
            updates: 0,
            history: ConvergenceHistory::default(),
        })
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn history(&self) -> &ConvergenceHistory {
        &self.history
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    /// Mean action clipped to the action limit.
    pub fn deterministic_action(&self, obs: &Observation) -> Result<f64> {
        let lim = self.config.action_limit;
        Ok(self.policy.mean(obs.as_slice())?[0].clamp(-lim, lim))
    }

    pub fn evaluate<E: Environment + ?Sized>(&self, env: &mut E) -> Result<f64> {
        evaluate(env, |o| self.deterministic_action(o))
    }

    fn collect_episode<E: Environment + ?Sized>(&mut self, env: &mut E, out: &mut Rollout) -> Result<usize> {
        let seed = self.rng.random::<u64>();
        let mut obs = env.reset(seed);
        let (mut rewards, mut values) = (Vec::new(), Vec::new());
        loop {
            let (action, logp) = self.policy.sample(obs.as_slice(), &mut self.rng)?;
            let v = self.value.forward(obs.as_slice())?[0];
            let lim = self.config.action_limit;
            let step = env.step(action[0].clamp(-lim, lim))?;
            out.obs.extend_from_slice(obs.as_slice());
            out.actions.push(action[0]);
            out.log_probs.push(logp);
            rewards.push(step.reward);
            values.push(v);
            obs = step.observation;
            if step.done {
                break;
            }
        }
        values.push(0.0);
        let (adv, ret) = compute_gae(&rewards, &values, self.config.gamma, self.config.gae_lambda)?;
        out.advantages.extend(adv);
        out.returns.extend(ret);
        self.episodes += 1;
        self.env_steps += rewards.len() as u64;
        Ok(rewards.len())
    }

    fn update(&mut self, mut ro: Rollout) -> Result<()> {
        let n = ro.actions.len();
        let mean = ro.advantages.iter().sum::<f64>() / n as f64;
        let var = ro.advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-8);
        ro.advantages.iter_mut().for_each(|a| *a = (*a - mean) / std);
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..self.config.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.config.minibatch) {
                let b = chunk.len();
                let mut obs = Vec::with_capacity(b * OBS_DIM);
                for &i in chunk {
                    obs.extend_from_slice(&ro.obs[i * OBS_DIM..(i + 1) * OBS_DIM]);
                }
                let pick = |v: &[f64]| chunk.iter().map(|&i| v[i]).collect::<Vec<f64>>();
                let (actions, old_lp, adv, ret) = (pick(&ro.actions), pick(&ro.log_probs), pick(&ro.advantages), pick(&ro.returns));

                let batch = self.policy.log_prob_batch(&obs, &actions, b)?;
                let loss = ppo_loss(&batch.log_probs, &old_lp, &adv, self.config.clip_eps)
                    .map_err(|e| diverged(self.env_steps, e.to_string()))?;
                let (mut g_net, mut g_ls) = self.policy.log_prob_backward(&batch, &loss.weights, self.config.entropy_coef)?;
                clip_grad_norm(&mut [&mut g_net, &mut g_ls], self.config.max_grad_norm);
                g_net.iter_mut().chain(g_ls.iter_mut()).for_each(|g| *g = -*g);
                self.policy_opt.step(self.policy.net.params_mut(), &g_net)?;
                self.log_std_opt.step(&mut self.policy.log_std, &g_ls)?;

                let cache = self.value.forward_batch(&obs, b)?;
                let upstream: Vec<f64> = cache.output().iter().zip(&ret).map(|(v, r)| (v - r) / b as f64).collect();
                if upstream.iter().any(|u| !u.is_finite()) {
                    return Err(diverged(self.env_steps, "value loss"));
                }
                let mut g_v = vec![0.0; self.value.num_params()];
                self.value.backward_batch(&cache, &upstream, Some(&mut g_v))?;
                clip_grad_norm(&mut [&mut g_v], self.config.max_grad_norm);
                self.value_opt.step(self.value.params_mut(), &g_v)?;
                self.updates += 1;
            }
        }
        Ok(())
    }

    fn record<E: Environment + ?Sized>(&mut self, eval_env: &mut E) -> Result<()> {
        let eval_n_tot = self.evaluate(eval_env)?;
        log::info!("ppo steps {} episodes {} eval N_Tot {eval_n_tot:.6}", self.env_steps, self.episodes);
        self.history.push(HistoryPoint {
            env_steps: self.env_steps,
            episodes: self.episodes,
            updates: self.updates,
            eval_n_tot,
        })
    }

    /// Trains until the step budget is used up by whole episodes, evaluating
    /// at the start, every `eval_interval` steps and at the end.
    pub fn train<E: Environment + ?Sized, V: Environment + ?Sized>(&mut self, env: &mut E, eval_env: &mut V) -> Result<()> {
        self.record(eval_env)?;
        let mut next_eval = self.env_steps + self.config.eval_interval;
        let mut episode_len = None;
        loop {
            let mut ro = Rollout::default();
            for _ in 0..self.config.rollout_episodes {
                if let Some(len) = episode_len {
                    if self.env_steps + len as u64 > self.config.total_steps {
                        break;
                    }
                }
                episode_len = Some(self.collect_episode(env, &mut ro)?);
            }
            if ro.actions.is_empty() {
                break;
            }
            self.update(ro)?;
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
        Checkpoint::new(
            "ppo",
            vec![
                NetRecord::from_net("policy", &self.policy.net),
                NetRecord::from_vector("log_std", &self.policy.log_std),
                NetRecord::from_net("value", &self.value),
            ],
            &self.rng,
        )
    }

    /// Policy stored in a PPO checkpoint.
    pub fn policy_from_checkpoint(ckpt: &Checkpoint) -> Result<GaussianPolicy> {
        if ckpt.algorithm != "ppo" {
            return Err(Error::InvalidParameter(format!("expected a ppo checkpoint, got {}", ckpt.algorithm)));
        }
        Ok(GaussianPolicy {
            net: ckpt.get("policy")?.to_net()?,
            log_std: ckpt.get("log_std")?.params.clone(),
        })
    }
}

/// PPO from scratch; returns the trained policy and its evaluation history.
pub fn ppo_train<E: Environment + ?Sized, V: Environment + ?Sized>(
    env: &mut E,
    eval_env: &mut V,
    config: &PpoConfig,
    seed: u64,
) -> Result<(GaussianPolicy, ConvergenceHistory)> {
    let mut t = PpoTrainer::new(config.clone(), seed)?;
    t.train(env, eval_env)?;
    Ok((t.policy, t.history))
}
