//! PPO on the control environment at a reduced budget.
//!
//! `cargo run --release --example ppo -- [steps] [seed]` (defaults 20000, 42; a few seconds).

use backflow::env::EnvConfig;
use backflow::rl::{env_pair, ppo_train, PpoConfig};

fn main() -> backflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps = args.next().and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(42);
    let (mut train, mut eval) = env_pair(&EnvConfig::default(), 0.0)?;
    let config = PpoConfig { total_steps: steps, eval_interval: (steps / 10).max(1), ..PpoConfig::default() };
    let (_, history) = ppo_train(&mut train, &mut eval, &config, seed)?;
    for p in &history.points {
        println!("steps {:6}  episodes {:4}  updates {:5}  N_Tot {:.6}", p.env_steps, p.episodes, p.updates, p.eval_n_tot);
    }
    Ok(())
}
