use std::path::{Path, PathBuf};
use std::process::ExitCode;

use backflow::experiment::{self, Method, RunConfig};
use backflow::{Error, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "backflow", version, about = "Information backflow control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (else $BACKFLOW_OUT, else the config's `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Decay rate on a grid and its negativity windows.
    Gamma,
    /// Uncontrolled dynamics.
    Baseline,
    /// Powell or L-BFGS-B pulse optimization.
    Oct,
    /// PPO or SAC training.
    Train,
    /// Re-evaluate a trained checkpoint.
    Eval,
    /// Compare finished runs.
    Report {
        /// Run directories.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn load(cli: &Cli, fallback: Method) -> Result<RunConfig> {
    let mut c = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::new(fallback),
    };
    if let Some(seed) = cli.seed {
        c.seed = seed;
    }
    Ok(c)
}

fn require(c: &RunConfig, ok: fn(Method) -> bool, what: &str) -> Result<()> {
    if ok(c.method.name) {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} needs a config with method {}", match what {
            "oct" => "powell or lbfgsb",
            _ => "ppo or sac",
        })))
    }
}

fn run(cli: &Cli) -> Result<()> {
    let out = |c: &RunConfig| c.resolve_out(cli.out.as_deref());
    match &cli.command {
        Command::Gamma => {
            let c = load(cli, Method::Baseline)?;
            let windows = experiment::cmd_gamma(&c, &out(&c))?;
            println!("{} negativity windows", windows.len());
        }
        Command::Baseline => {
            let mut c = load(cli, Method::Baseline)?;
            c.method = experiment::MethodConfig::new(Method::Baseline);
            let s = experiment::cmd_baseline(&c, &out(&c))?;
            println!("N_Tot {}", s.n_tot.unwrap_or(f64::NAN));
        }
        Command::Oct => {
            let c = load(cli, Method::Powell)?;
            require(&c, Method::is_oct, "oct")?;
            let s = experiment::cmd_oct(&c, &out(&c))?;
            println!("{} N_Tot {} (baseline {})", c.method.name, s.n_tot.unwrap_or(f64::NAN), s.baseline_n_tot);
        }
        Command::Train => {
            let c = load(cli, Method::Ppo)?;
            require(&c, Method::is_rl, "train")?;
            let s = experiment::cmd_train(&c, &out(&c))?;
            println!("{} N_Tot {} (baseline {})", c.method.name, s.n_tot.unwrap_or(f64::NAN), s.baseline_n_tot);
        }
        Command::Eval => {
            let c = load(cli, Method::Ppo)?;
            require(&c, Method::is_rl, "eval")?;
            let r = experiment::cmd_eval(&c, &out(&c))?;
            println!("{} N_Tot {} (reproduces summary: {})", r.method, r.n_tot, r.reproduces_summary);
        }
        Command::Report { runs } => {
            let dir = cli
                .out
                .clone()
                .or_else(|| std::env::var_os(experiment::OUT_DIR_ENV).map(PathBuf::from))
                .unwrap_or_else(|| Path::new("runs").join("report"));
            let r = experiment::cmd_report(runs, &dir)?;
            for row in &r.rows {
                println!("{:<10} N_Tot {:?} support {}", row.label, row.summary.n_tot, row.backflow_support);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
