//! Analytic gradients against central finite differences. Each check returns
//! the largest relative error |a − n| / max(|a|, |n|, 1e-6).

use backflow::env::OBS_DIM;
use backflow::nn::{DenseNet, GaussianPolicy};
use backflow::rl::{ppo_loss, SacNets};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

pub fn inputs(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Backward pass of Σ upstream·output for about 150 evenly spread parameters.
pub fn dense_net(sizes: &[usize]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let net = DenseNet::orthogonal(sizes, 1.0, &mut rng).unwrap();
    let b = 4;
    let x = inputs(b, sizes[0], 12);
    let up: Vec<f64> = (0..b * sizes[sizes.len() - 1]).map(|i| 0.3 + 0.1 * i as f64).collect();
    let f = |n: &DenseNet| -> f64 { n.forward_batch(&x, b).unwrap().output().iter().zip(&up).map(|(o, u)| o * u).sum() };
    let cache = net.forward_batch(&x, b).unwrap();
    let mut grads = vec![0.0; net.num_params()];
    net.backward_batch(&cache, &up, Some(&mut grads)).unwrap();
    let h = 1e-5;
    let stride = (net.num_params() / 150).max(1);
    (0..net.num_params())
        .step_by(stride)
        .map(|i| {
            let (mut p, mut m) = (net.clone(), net.clone());
            p.params_mut()[i] += h;
            m.params_mut()[i] -= h;
            rel_error(grads[i], (f(&p) - f(&m)) / (2.0 * h))
        })
        .fold(0.0, f64::max)
}

/// Clipped-surrogate gradient on a reduced policy, with some ratios clipped.
pub fn ppo_surrogate() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let policy = GaussianPolicy::new(OBS_DIM, 1, &[8, 8], -0.3, &mut rng).unwrap();
    let b = 12;
    let obs = inputs(b, OBS_DIM, 4);
    let actions = inputs(b, 1, 5);
    let adv = inputs(b, 1, 6);
    let base = policy.log_prob_batch(&obs, &actions, b).unwrap().log_probs;
    let old: Vec<f64> = base.iter().enumerate().map(|(i, lp)| lp + [0.0, 0.5, -0.5, 0.05][i % 4]).collect();
    let objective = |p: &GaussianPolicy| {
        let lp = p.log_prob_batch(&obs, &actions, b).unwrap().log_probs;
        ppo_loss(&lp, &old, &adv, 0.2).unwrap().objective
    };
    let batch = policy.log_prob_batch(&obs, &actions, b).unwrap();
    let loss = ppo_loss(&batch.log_probs, &old, &adv, 0.2).unwrap();
    assert!(loss.clip_fraction > 0.0 && loss.clip_fraction < 1.0);
    let (g_net, g_ls) = policy.log_prob_backward(&batch, &loss.weights, 0.0).unwrap();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..policy.net.num_params() {
        let (mut p, mut m) = (policy.clone(), policy.clone());
        p.net.params_mut()[i] += h;
        m.net.params_mut()[i] -= h;
        worst = worst.max(rel_error(g_net[i], (objective(&p) - objective(&m)) / (2.0 * h)));
    }
    let (mut p, mut m) = (policy.clone(), policy.clone());
    p.log_std[0] += h;
    m.log_std[0] -= h;
    worst.max(rel_error(g_ls[0], (objective(&p) - objective(&m)) / (2.0 * h)))
}

/// SAC actor loss gradient on reduced networks with frozen noise.
pub fn sac_policy() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let nets = SacNets::new(&[8, 8], 5.0, &mut rng).unwrap();
    let b = 10;
    let states = inputs(b, OBS_DIM, 9);
    let noise = inputs(b, 1, 10);
    let (_, grads) = nets.policy_loss(&states, &noise, 0.2).unwrap();
    let h = 1e-6;
    (0..nets.actor.net.num_params())
        .map(|i| {
            let (mut p, mut m) = (nets.clone(), nets.clone());
            p.actor.net.params_mut()[i] += h;
            m.actor.net.params_mut()[i] -= h;
            let fd = (p.policy_loss(&states, &noise, 0.2).unwrap().0 - m.policy_loss(&states, &noise, 0.2).unwrap().0) / (2.0 * h);
            rel_error(grads[i], fd)
        })
        .fold(0.0, f64::max)
}
