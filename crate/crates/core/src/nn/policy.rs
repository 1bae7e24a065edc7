use rand::Rng;
use rand_distr::StandardNormal;

use super::{DenseNet, ForwardCache};
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

fn clamp_log_std(x: f64) -> (f64, bool) {
    let c = x.clamp(LOG_STD_MIN, LOG_STD_MAX);
    (c, c != x)
}

/// log(1 − tanh²u), stable for large |u|.
fn log_sech2(u: f64) -> f64 {
    let softplus = |x: f64| if x > 30.0 { x } else { x.exp().ln_1p() };
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::ShapeMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

/// Diagonal Gaussian with a network mean and a learned state-independent
/// log standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub net: DenseNet,
    pub log_std: Vec<f64>,
}

/// Batched log-densities together with the cache needed for their gradient.
#[derive(Clone, Debug)]
pub struct GaussianBatch {
    cache: ForwardCache,
    actions: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl GaussianPolicy {
    pub fn new<R: Rng>(obs_dim: usize, act_dim: usize, hidden: &[usize], init_log_std: f64, rng: &mut R) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(obs_dim).chain(hidden.iter().copied()).chain([act_dim]).collect();
        Ok(GaussianPolicy {
            net: DenseNet::orthogonal(&sizes, 0.01, rng)?,
            log_std: vec![init_log_std; act_dim],
        })
    }

    pub fn act_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|l| clamp_log_std(*l).0.exp()).collect()
    }

    pub fn mean(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(obs)
    }

    pub fn sample<R: Rng>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let mu = self.mean(obs)?;
        let action: Vec<f64> = mu
            .iter()
            .zip(self.std())
            .map(|(m, s)| m + s * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let lp = self.density(&mu, &action);
        Ok((action, lp))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        check_len("action", self.act_dim(), action.len())?;
        Ok(self.density(&self.mean(obs)?, action))
    }

    fn density(&self, mu: &[f64], action: &[f64]) -> f64 {
        mu.iter()
            .zip(action)
            .zip(&self.log_std)
            .map(|((m, a), l)| {
                let ls = clamp_log_std(*l).0;
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - HALF_LOG_2PI
            })
            .sum()
    }

    /// Differential entropy Σ (log σ + ½ log 2πe).
    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|l| clamp_log_std(*l).0 + HALF_LOG_2PI + 0.5).sum()
    }

    pub fn log_prob_batch(&self, obs: &[f64], actions: &[f64], batch: usize) -> Result<GaussianBatch> {
        check_len("actions", batch * self.act_dim(), actions.len())?;
        let cache = self.net.forward_batch(obs, batch)?;
        let n = self.act_dim();
        let log_probs = cache
            .output()
            .chunks_exact(n)
            .zip(actions.chunks_exact(n))
            .map(|(mu, a)| self.density(mu, a))
            .collect();
        Ok(GaussianBatch {
            cache,
            actions: actions.to_vec(),
            log_probs,
        })
    }

    /// Gradients of Σ_i weights_i · log π(a_i|s_i) + entropy_weight · H with
    /// respect to (network parameters, log_std).
    pub fn log_prob_backward(&self, b: &GaussianBatch, weights: &[f64], entropy_weight: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        let batch = b.cache.batch();
        check_len("log-prob weights", batch, weights.len())?;
        let n = self.act_dim();
        let mu = b.cache.output();
        let mut upstream = vec![0.0; batch * n];
        let mut g_log_std = vec![0.0; n];
        for i in 0..batch {
            for j in 0..n {
                let (ls, clamped) = clamp_log_std(self.log_std[j]);
                let var = (2.0 * ls).exp();
                let diff = b.actions[i * n + j] - mu[i * n + j];
                upstream[i * n + j] = weights[i] * diff / var;
                if !clamped {
                    g_log_std[j] += weights[i] * (diff * diff / var - 1.0);
                }
            }
        }
        for (j, g) in g_log_std.iter_mut().enumerate() {
            if !clamp_log_std(self.log_std[j]).1 {
                *g += entropy_weight;
            }
        }
        let mut g_net = vec![0.0; self.net.num_params()];
        self.net.backward_batch(&b.cache, &upstream, Some(&mut g_net))?;
        Ok((g_net, g_log_std))
    }
}

/// tanh-squashed Gaussian rescaled to [low, high]; the network outputs the
/// mean and the (clamped) log standard deviation of the pre-squash sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SquashedGaussianPolicy {
    pub net: DenseNet,
    act_dim: usize,
    scale: f64,
    offset: f64,
}

/// Reparameterized batch sample a = scale·tanh(μ + σ ε) + offset.
#[derive(Clone, Debug)]
pub struct SquashedBatch {
    cache: ForwardCache,
    noise: Vec<f64>,
    tanh_u: Vec<f64>,
    sigma: Vec<f64>,
    clamped: Vec<bool>,
    pub actions: Vec<f64>,
    pub log_probs: Vec<f64>,
}

impl SquashedGaussianPolicy {
    pub fn new<R: Rng>(obs_dim: usize, act_dim: usize, hidden: &[usize], low: f64, high: f64, rng: &mut R) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(obs_dim).chain(hidden.iter().copied()).chain([2 * act_dim]).collect();
        Self::from_net(DenseNet::orthogonal(&sizes, 0.01, rng)?, low, high)
    }

    pub fn from_net(net: DenseNet, low: f64, high: f64) -> Result<Self> {
        if net.output_dim() % 2 != 0 {
            return Err(Error::InvalidParameter("squashed head needs 2·act_dim outputs".into()));
        }
        if !(low < high) {
            return Err(Error::InvalidParameter(format!("invalid action range [{low}, {high}]")));
        }
        Ok(SquashedGaussianPolicy {
            act_dim: net.output_dim() / 2,
            net,
            scale: 0.5 * (high - low),
            offset: 0.5 * (high + low),
        })
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn range(&self) -> (f64, f64) {
        (self.offset - self.scale, self.offset + self.scale)
    }

    /// Squashed mean action.
    pub fn deterministic(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.forward(obs)?;
        Ok(out[..self.act_dim].iter().map(|m| self.scale * m.tanh() + self.offset).collect())
    }

    pub fn sample<R: Rng>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let noise: Vec<f64> = (0..self.act_dim).map(|_| rng.sample(StandardNormal)).collect();
        let b = self.sample_batch(obs, &noise, 1)?;
        Ok((b.actions, b.log_probs[0]))
    }

    /// log π(a|s) for an action strictly inside the range.
    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        check_len("action", self.act_dim, action.len())?;
        let out = self.net.forward(obs)?;
        let mut lp = 0.0;
        for j in 0..self.act_dim {
            let y = (action[j] - self.offset) / self.scale;
            if y.abs() >= 1.0 {
                return Ok(f64::NEG_INFINITY);
            }
            let u = y.atanh();
            let ls = clamp_log_std(out[self.act_dim + j]).0;
            let z = (u - out[j]) / ls.exp();
            lp += -0.5 * z * z - ls - HALF_LOG_2PI - log_sech2(u) - self.scale.ln();
        }
        Ok(lp)
    }

    /// Samples a batch with externally supplied standard-normal noise.
    pub fn sample_batch(&self, obs: &[f64], noise: &[f64], batch: usize) -> Result<SquashedBatch> {
        let n = self.act_dim;
        check_len("action noise", batch * n, noise.len())?;
        let cache = self.net.forward_batch(obs, batch)?;
        let out = cache.output();
        let mut b = SquashedBatch {
            noise: noise.to_vec(),
            tanh_u: vec![0.0; batch * n],
            sigma: vec![0.0; batch * n],
            clamped: vec![false; batch * n],
            actions: vec![0.0; batch * n],
            log_probs: vec![0.0; batch],
            cache: cache.clone(),
        };
        for i in 0..batch {
            for j in 0..n {
                let k = i * n + j;
                let mu = out[i * 2 * n + j];
                let (ls, clamped) = clamp_log_std(out[i * 2 * n + n + j]);
                let sigma = ls.exp();
                let u = mu + sigma * noise[k];
                let t = u.tanh();
                b.tanh_u[k] = t;
                b.sigma[k] = sigma;
                b.clamped[k] = clamped;
                b.actions[k] = self.scale * t + self.offset;
                b.log_probs[i] += -0.5 * noise[k] * noise[k] - ls - HALF_LOG_2PI - log_sech2(u) - self.scale.ln();
            }
        }
        Ok(b)
    }

    /// Parameter gradient of Σ_i (d_action_i · a_i + d_log_prob_i · log π_i),
    /// holding the noise fixed.
    pub fn sample_backward(&self, b: &SquashedBatch, d_action: &[f64], d_log_prob: &[f64]) -> Result<Vec<f64>> {
        let n = self.act_dim;
        let batch = b.cache.batch();
        check_len("action gradient", batch * n, d_action.len())?;
        check_len("log-prob gradient", batch, d_log_prob.len())?;
        let mut upstream = vec![0.0; batch * 2 * n];
        for i in 0..batch {
            for j in 0..n {
                let k = i * n + j;
                let t = b.tanh_u[k];
                // d/du of (d_action · a + d_log_prob · log π).
                let g_u = d_action[k] * self.scale * (1.0 - t * t) + d_log_prob[i] * 2.0 * t;
                upstream[i * 2 * n + j] = g_u;
                if !b.clamped[k] {
                    upstream[i * 2 * n + n + j] = g_u * b.sigma[k] * b.noise[k] - d_log_prob[i];
                }
            }
        }
        let mut grads = vec![0.0; self.net.num_params()];
        self.net.backward_batch(&b.cache, &upstream, Some(&mut grads))?;
        Ok(grads)
    }
}
