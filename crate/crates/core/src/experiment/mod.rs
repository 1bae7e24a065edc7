//! Run configuration, output files and method reports.

mod config;
mod report;

pub use config::{Method, MethodConfig, ModelConfig, OctBlock, RewardConfig, RunConfig, Start, OUT_DIR_ENV};
pub use report::{cmd_report, read_trajectory_csv, Report, ReportRow};

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::ControlEnv;
use crate::error::{Error, Result};
use crate::fmt::f17;
use crate::nn::Checkpoint;
use crate::oct::{lbfgsb_optimize, powell_optimize, BackflowObjective, OptimizationResult};
use crate::rl::{env_pair, evaluate, ConvergenceHistory, PpoTrainer, SacTrainer};
use crate::{decay_rate, negativity_windows, random_pulse, TrajectoryRecord};

/// Number of samples in gamma.csv.
pub const GAMMA_GRID: usize = 2000;
/// N_loc threshold for counting backflow bins.
pub const SUPPORT_THRESHOLD: f64 = 1e-6;

/// Work spent by a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub objective_evaluations: Option<u64>,
    pub env_steps: Option<u64>,
}

/// Aborted training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub step: u64,
    pub reason: String,
}

/// Contents of summary.json. Wall time is written separately to
/// timing.json so that every other file is reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub n_tot: Option<f64>,
    pub baseline_n_tot: f64,
    pub cost: Cost,
    pub backflow_support: Option<usize>,
    pub seed: u64,
    pub config_hash: String,
    pub model_hash: String,
    pub failure: Option<Failure>,
    pub artifacts: Vec<String>,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RunSummary {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("summary.json");
        let file = File::open(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_reader(file)?)
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_with(dir: &Path, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<String> {
    let mut w = create(dir, name)?;
    f(&mut w)?;
    w.flush()?;
    Ok(name.to_string())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<String> {
    write_with(dir, name, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

/// CSV with header `k,t,Omega,D,Ddot,gamma,n_loc`, one row per bin boundary.
pub fn write_trajectory_csv<W: Write>(rec: &TrajectoryRecord, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "t", "Omega", "D", "Ddot", "gamma", "n_loc"])?;
    for k in 0..rec.len() {
        w.write_record([
            k.to_string(),
            f17(rec.times[k]),
            f17(rec.omega_samples[k]),
            f17(rec.distances[k]),
            f17(rec.ddot[k]),
            f17(rec.gamma_samples[k]),
            f17(rec.n_loc[k]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

struct Run<'a> {
    config: &'a RunConfig,
    dir: &'a Path,
    started: Instant,
    artifacts: Vec<String>,
}

impl<'a> Run<'a> {
    fn start(config: &'a RunConfig, dir: &'a Path) -> Result<Self> {
        config.validate()?;
        fs::create_dir_all(dir)?;
        Ok(Run {
            config,
            dir,
            started: Instant::now(),
            artifacts: Vec::new(),
        })
    }

    fn baseline(&self) -> Result<f64> {
        let m = &self.config.model;
        let obj = BackflowObjective::new(m.params()?, m.propagation()?, m.bounds()?)?;
        obj.evaluate(&vec![0.0; obj.dim()])
    }

    fn trajectory(&mut self, rec: &TrajectoryRecord) -> Result<()> {
        let name = write_with(self.dir, "trajectory.csv", |w| write_trajectory_csv(rec, w))?;
        self.artifacts.push(name);
        Ok(())
    }

    fn finish(mut self, n_tot: Option<f64>, support: Option<usize>, cost: Cost, failure: Option<Failure>) -> Result<RunSummary> {
        self.artifacts.push("summary.json".into());
        let summary = RunSummary {
            method: self.config.method.name,
            n_tot,
            baseline_n_tot: self.baseline()?,
            cost,
            backflow_support: support,
            seed: self.config.seed,
            config_hash: self.config.hash(),
            model_hash: self.config.model.hash(),
            failure,
            artifacts: self.artifacts,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        write_json(self.dir, "summary.json", &summary)?;
        write_json(self.dir, "timing.json", &serde_json::json!({ "wall_time_s": summary.wall_time_s }))?;
        Ok(summary)
    }
}

/// Writes gamma.csv (t, gamma) on a uniform grid over [0, T] and
/// windows.json with the intervals where γ(t) < 0. Returns the windows.
pub fn cmd_gamma(config: &RunConfig, dir: &Path) -> Result<Vec<(f64, f64)>> {
    config.validate()?;
    fs::create_dir_all(dir)?;
    let params = config.model.params()?;
    let horizon = config.model.horizon;
    write_with(dir, "gamma.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["t", "gamma"])?;
        for i in 0..GAMMA_GRID {
            let t = if i + 1 == GAMMA_GRID { horizon } else { horizon * i as f64 / (GAMMA_GRID - 1) as f64 };
            c.write_record([f17(t), f17(decay_rate(&params, t)?)])?;
        }
        c.flush()?;
        Ok(())
    })?;
    let windows = negativity_windows(&params, horizon, GAMMA_GRID)?;
    write_json(dir, "windows.json", &windows)?;
    Ok(windows)
}

/// Uncontrolled run: trajectory.csv and summary.json for Ω ≡ 0.
pub fn cmd_baseline(config: &RunConfig, dir: &Path) -> Result<RunSummary> {
    let mut run = Run::start(config, dir)?;
    let m = &config.model;
    let obj = BackflowObjective::new(m.params()?, m.propagation()?, m.bounds()?)?;
    let rec = obj.trajectory(&vec![0.0; obj.dim()])?;
    run.trajectory(&rec)?;
    let pulse = obj.pulse(&vec![0.0; obj.dim()])?;
    run.artifacts.push(write_with(dir, "pulse.csv", |w| pulse.write_csv(w))?);
    let cost = Cost {
        objective_evaluations: Some(obj.evaluations()),
        env_steps: None,
    };
    run.finish(Some(rec.n_total), Some(rec.backflow_support(SUPPORT_THRESHOLD)), cost, None)
}

fn optimize(config: &RunConfig, x0: &[f64]) -> Result<(OptimizationResult, BackflowObjective)> {
    let m = &config.model;
    let obj = BackflowObjective::new(m.params()?, m.propagation()?, m.bounds()?)?;
    let block = config.method.oct().ok_or_else(|| Error::Config(format!("{} is not an optimal-control method", config.method.name)))?;
    let oc = block.optimizer(config.method.name);
    let r = match config.method.name {
        Method::Powell => powell_optimize(|x| obj.evaluate(x), x0, obj.bounds(), &oc),
        _ => lbfgsb_optimize(|x| obj.evaluate(x), x0, obj.bounds(), &oc),
    }
    .map_err(|e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{} optimization: {m}", config.method.name)),
        other => other,
    })?;
    Ok((r, obj))
}

fn write_oct_files(dir: &Path, r: &OptimizationResult, obj: &BackflowObjective) -> Result<(Vec<String>, TrajectoryRecord)> {
    fs::create_dir_all(dir)?;
    let rec = obj.trajectory(&r.x)?;
    let pulse = obj.pulse(&r.x)?;
    let files = vec![
        write_with(dir, "convergence.csv", |w| r.history.write_csv(w))?,
        write_with(dir, "pulse.csv", |w| pulse.write_csv(w))?,
        write_with(dir, "trajectory.csv", |w| write_trajectory_csv(&rec, w))?,
        write_with(dir, "optimizer.json", |w| r.write_summary_json(w))?,
    ];
    Ok((files, rec))
}

/// Powell or L-BFGS-B from the configured start(s). With `start = "both"`
/// the zero start is the primary result and the seeded random start goes
/// to `random_start/`.
pub fn cmd_oct(config: &RunConfig, dir: &Path) -> Result<RunSummary> {
    let mut run = Run::start(config, dir)?;
    let block = config.method.oct().ok_or_else(|| Error::Config(format!("oct needs method powell or lbfgsb, got {}", config.method.name)))?;
    let m = &config.model;
    let zero = vec![0.0; m.control_bins];
    let random = || Ok::<_, Error>(random_pulse(config.seed, m.bounds()?, m.control_bins, m.horizon)?.into_amplitudes());
    let primary = if block.start == Start::Random { random()? } else { zero };
    let (r, obj) = optimize(config, &primary)?;
    let (files, rec) = write_oct_files(dir, &r, &obj)?;
    run.artifacts.extend(files);
    if block.start == Start::Both {
        let (r2, obj2) = optimize(config, &random()?)?;
        let (files, _) = write_oct_files(&dir.join("random_start"), &r2, &obj2)?;
        run.artifacts.extend(files.into_iter().map(|f| format!("random_start/{f}")));
    }
    let cost = Cost {
        objective_evaluations: Some(r.evaluations()),
        env_steps: None,
    };
    run.finish(Some(rec.n_total), Some(rec.backflow_support(SUPPORT_THRESHOLD)), cost, None)
}

fn deterministic_episode<F: FnMut(&crate::env::Observation) -> Result<f64>>(env: &mut ControlEnv, policy: F) -> Result<(f64, TrajectoryRecord)> {
    let score = evaluate(env, policy)?;
    Ok((score, env.trajectory()?))
}

/// PPO or SAC training: convergence.csv, checkpoint.json, and pulse.csv plus
/// trajectory.csv of the deterministic evaluation episode. Aborted training
/// is recorded in the summary and returned as the error.
pub fn cmd_train(config: &RunConfig, dir: &Path) -> Result<RunSummary> {
    let mut run = Run::start(config, dir)?;
    let (mut train, mut eval) = env_pair(&config.env_config()?, config.reward.eval_omega0)?;
    let (outcome, history, checkpoint, steps): (Result<()>, ConvergenceHistory, Checkpoint, u64) = match config.method.name {
        Method::Ppo => {
            let mut t = PpoTrainer::new(config.method.ppo.clone().unwrap_or_default(), config.seed)?;
            let outcome = t.train(&mut train, &mut eval);
            (outcome, t.history().clone(), t.checkpoint(), t.env_steps())
        }
        Method::Sac => {
            let mut t = SacTrainer::new(config.method.sac.clone().unwrap_or_default(), config.seed)?;
            let outcome = t.train(&mut train, &mut eval);
            (outcome, t.history().clone(), t.checkpoint(), t.env_steps())
        }
        other => return Err(Error::Config(format!("train needs method ppo or sac, got {other}"))),
    };
    run.artifacts.push(write_with(dir, "convergence.csv", |w| history.write_csv(w))?);
    let cost = Cost {
        objective_evaluations: None,
        env_steps: Some(steps),
    };
    if let Err(e) = outcome {
        let step = match &e {
            Error::Diverged { step, .. } => *step,
            _ => steps,
        };
        let failure = Failure {
            step,
            reason: e.to_string(),
        };
        let last = history.last().map(|p| p.eval_n_tot);
        run.finish(last, None, cost, Some(failure))?;
        return Err(e);
    }
    run.artifacts.push(write_with(dir, "checkpoint.json", |w| checkpoint.write(w))?);
    let (score, rec) = evaluate_checkpoint(config, &checkpoint, &mut eval)?;
    let recorded = history.last().map(|p| p.eval_n_tot);
    if recorded != Some(score) {
        return Err(Error::NonFinite(format!("evaluation not reproducible: {recorded:?} vs {score}")));
    }
    let pulse = eval.pulse()?;
    run.artifacts.push(write_with(dir, "pulse.csv", |w| pulse.write_csv(w))?);
    run.trajectory(&rec)?;
    run.finish(Some(rec.n_total), Some(rec.backflow_support(SUPPORT_THRESHOLD)), cost, None)
}

fn evaluate_checkpoint(config: &RunConfig, ckpt: &Checkpoint, env: &mut ControlEnv) -> Result<(f64, TrajectoryRecord)> {
    match config.method.name {
        Method::Ppo => {
            let policy = PpoTrainer::policy_from_checkpoint(ckpt)?;
            let lim = config.method.ppo.as_ref().map_or(crate::rl::PpoConfig::default().action_limit, |c| c.action_limit);
            deterministic_episode(env, |o| Ok(policy.mean(o.as_slice())?[0].clamp(-lim, lim)))
        }
        Method::Sac => {
            let policy = SacTrainer::policy_from_checkpoint(ckpt)?;
            deterministic_episode(env, |o| Ok(policy.deterministic(o.as_slice())?[0]))
        }
        other => Err(Error::Config(format!("eval needs method ppo or sac, got {other}"))),
    }
}

/// Result of re-evaluating a saved policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    pub n_tot: f64,
    pub summary_n_tot: Option<f64>,
    pub reproduces_summary: bool,
}

/// Reloads checkpoint.json from a finished training run, replays the
/// deterministic evaluation episode and writes eval.json.
pub fn cmd_eval(config: &RunConfig, dir: &Path) -> Result<EvalReport> {
    config.validate()?;
    let path = dir.join("checkpoint.json");
    let file = File::open(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let ckpt = Checkpoint::read(std::io::BufReader::new(file))?;
    let (_, mut eval) = env_pair(&config.env_config()?, config.reward.eval_omega0)?;
    let (score, _) = evaluate_checkpoint(config, &ckpt, &mut eval)?;
    let summary_n_tot = RunSummary::read(dir).ok().and_then(|s| s.n_tot);
    let report = EvalReport {
        method: config.method.name,
        n_tot: score,
        summary_n_tot,
        reproduces_summary: summary_n_tot == Some(score),
    };
    write_json(dir, "eval.json", &report)?;
    Ok(report)
}

/// Runs the command matching the configured method (baseline, oct or train).
pub fn run_method(config: &RunConfig, dir: &Path) -> Result<RunSummary> {
    match config.method.name {
        Method::Baseline => cmd_baseline(config, dir),
        m if m.is_oct() => cmd_oct(config, dir),
        _ => cmd_train(config, dir),
    }
}
