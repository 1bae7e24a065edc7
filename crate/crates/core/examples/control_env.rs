//! The episodic control environment driven by a hand-written controller.

use backflow::env::{rollout, ControlEnv, EnvConfig, Observation};

fn main() -> backflow::Result<()> {
    let mut env = ControlEnv::new(EnvConfig::default())?;
    // Push the amplitude toward Ω = 2 while the decay rate is positive, back to 0 otherwise.
    let mut controller = |o: &Observation| -> backflow::Result<f64> {
        let target = if o.decay_rate() > 0.0 { 2.0 } else { 0.0 };
        Ok((target - o.amplitude()).clamp(-1.0, 1.0))
    };
    for seed in 0..3 {
        let ep = rollout(&mut controller, &mut env, seed)?;
        println!(
            "seed {seed}: Ω₀ = {:+.3}, {} steps, return {:.6}, N_Tot {:.6}",
            ep.transitions[0].state.amplitude(),
            ep.transitions.len(),
            ep.total_reward(),
            ep.n_total
        );
    }
    let mut out = Vec::new();
    env.write_episode_csv(&mut out)?;
    println!("{}", String::from_utf8_lossy(&out).lines().take(4).collect::<Vec<_>>().join("\n"));
    Ok(())
}
