//! A dense tanh network fitted to sin(3x) with Adam.

use backflow::nn::{AdamState, DenseNet};
use rand::SeedableRng;

fn main() -> backflow::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
    let mut net = DenseNet::orthogonal(&[1, 32, 32, 1], 1.0, &mut rng)?;
    let mut adam = AdamState::new(net.num_params(), 1e-2);
    let xs: Vec<f64> = (0..64).map(|i| -1.0 + 2.0 * i as f64 / 63.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();
    for epoch in 0..=1500 {
        let cache = net.forward_batch(&xs, xs.len())?;
        let diff: Vec<f64> = cache.output().iter().zip(&ys).map(|(p, y)| p - y).collect();
        let mse = diff.iter().map(|d| d * d).sum::<f64>() / xs.len() as f64;
        if epoch % 300 == 0 {
            println!("epoch {epoch:4}  mse {mse:.3e}");
        }
        let upstream: Vec<f64> = diff.iter().map(|d| 2.0 * d / xs.len() as f64).collect();
        let mut grads = vec![0.0; net.num_params()];
        net.backward_batch(&cache, &upstream, Some(&mut grads))?;
        adam.step(net.params_mut(), &grads)?;
    }
    Ok(())
}
