//! Baseline, Powell, L-BFGS-B, PPO and SAC on one model, aggregated into a report.
//!
//! `cargo run --release --example compare_methods -- [out_dir]` (default
//! runs/compare). Budgets are reduced; this takes a few minutes.

use std::path::PathBuf;

use backflow::experiment::{cmd_report, run_method, RunConfig};

const CONFIGS: [&str; 5] = [
    "method.name = \"baseline\"",
    "method.name = \"powell\"\nmethod.powell.start = \"zero\"\nmethod.powell.max_iterations = 10",
    "method.name = \"lbfgsb\"\nmethod.lbfgsb.start = \"random\"\nmethod.lbfgsb.max_iterations = 30",
    "method.name = \"ppo\"\nmethod.ppo.total_steps = 20_000\nmethod.ppo.eval_interval = 2_000",
    "method.name = \"sac\"\nmethod.sac.total_steps = 3_000\nmethod.sac.eval_interval = 1_000",
];

fn main() -> backflow::Result<()> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "runs/compare".into()));
    let mut dirs = Vec::new();
    for text in CONFIGS {
        let config = RunConfig::from_toml(text)?;
        let dir = root.join(config.method.name.name());
        let s = run_method(&config, &dir)?;
        println!("{:<8} N_Tot {:.6}  ({:.1} s)", s.method, s.n_tot.unwrap_or(f64::NAN), s.wall_time_s);
        dirs.push(dir);
    }
    let report = cmd_report(&dirs, &root.join("report"))?;
    for r in &report.rows {
        println!("{:<8} backflow support {:2} bins", r.label, r.backflow_support);
    }
    println!("RL support ≥ OCT support: {:?}", report.rl_spread_at_least_oct);
    Ok(())
}
