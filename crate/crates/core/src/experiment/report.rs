use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Method, RunSummary, SUPPORT_THRESHOLD};
use crate::error::{Error, Result};
use crate::fmt::f17;
use crate::TrajectoryRecord;

/// Parses a trajectory.csv written by a run; derivatives, N_loc and N_Tot
/// are recomputed from the D column.
pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryRecord> {
    let file = File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut r = csv::Reader::from_reader(file);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: missing column {name}", path.display())))
    };
    let (ti, oi, di, gi) = (col("t")?, col("Omega")?, col("D")?, col("gamma")?);
    let (mut t, mut omega, mut d, mut gamma) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let get = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Config(format!("{}: bad value in row {rec:?}", path.display())))
        };
        t.push(get(ti)?);
        omega.push(get(oi)?);
        d.push(get(di)?);
        gamma.push(get(gi)?);
    }
    if t.len() < 2 {
        return Err(Error::Config(format!("{}: fewer than two rows", path.display())));
    }
    let dt = t[1] - t[0];
    TrajectoryRecord::from_samples(t, d, gamma, omega, dt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub backflow_support: usize,
}

/// Aggregated comparison of runs on one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub model_hash: String,
    pub rows: Vec<ReportRow>,
    /// Smallest N_loc support among RL runs, largest among OCT runs, and
    /// whether the former is at least the latter (None unless both kinds are present).
    pub rl_min_support: Option<usize>,
    pub oct_max_support: Option<usize>,
    pub rl_spread_at_least_oct: Option<bool>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Reads summary.json and trajectory.csv from each run directory and writes
/// comparison.csv, n_loc.csv and report.json to `out`. Runs must share the
/// same model hash and time grid.
pub fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<Report> {
    if dirs.is_empty() {
        return Err(Error::Config("report needs at least one run directory".into()));
    }
    let mut rows = Vec::new();
    let mut series: Vec<TrajectoryRecord> = Vec::new();
    let mut seen: HashMap<Method, usize> = HashMap::new();
    for dir in dirs {
        let summary = RunSummary::read(dir)?;
        if let Some(first) = rows.first().map(|r: &ReportRow| &r.summary) {
            if first.model_hash != summary.model_hash {
                return Err(Error::Config(format!(
                    "model hash mismatch: {} ({}) vs {} ({})",
                    first.model_hash,
                    dirs[0].display(),
                    summary.model_hash,
                    dir.display()
                )));
            }
        }
        let traj = read_trajectory_csv(&dir.join("trajectory.csv"))?;
        if let Some(first) = series.first() {
            if first.times != traj.times {
                return Err(Error::Config(format!("{}: time grid differs from {}", dir.display(), dirs[0].display())));
            }
        }
        let count = seen.entry(summary.method).or_insert(0);
        *count += 1;
        let label = if *count == 1 { summary.method.to_string() } else { format!("{}_{count}", summary.method) };
        rows.push(ReportRow {
            label,
            dir: dir.clone(),
            backflow_support: traj.backflow_support(SUPPORT_THRESHOLD),
            summary,
        });
        series.push(traj);
    }

    let support = |pred: fn(Method) -> bool| rows.iter().filter(move |r| pred(r.summary.method)).map(|r| r.backflow_support);
    let rl_min_support = support(Method::is_rl).min();
    let oct_max_support = support(Method::is_oct).max();
    let rl_spread_at_least_oct = rl_min_support.zip(oct_max_support).map(|(a, b)| a >= b);
    let report = Report {
        model_hash: rows[0].summary.model_hash.clone(),
        rows,
        rl_min_support,
        oct_max_support,
        rl_spread_at_least_oct,
    };

    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out.join("comparison.csv"))?));
    w.write_record([
        "label",
        "method",
        "n_tot",
        "baseline_n_tot",
        "objective_evaluations",
        "env_steps",
        "backflow_support",
        "config_hash",
    ])?;
    for r in &report.rows {
        let s = &r.summary;
        w.write_record([
            r.label.clone(),
            s.method.to_string(),
            s.n_tot.map_or_else(String::new, f17),
            f17(s.baseline_n_tot),
            opt(s.cost.objective_evaluations),
            opt(s.cost.env_steps),
            r.backflow_support.to_string(),
            s.config_hash.clone(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out.join("n_loc.csv"))?));
    let header: Vec<String> = ["k".to_string(), "t".to_string()].into_iter().chain(report.rows.iter().map(|r| r.label.clone())).collect();
    w.write_record(&header)?;
    for k in 0..series[0].len() {
        let row: Vec<String> = [k.to_string(), f17(series[0].times[k])]
            .into_iter()
            .chain(series.iter().map(|s| f17(s.n_loc[k])))
            .collect();
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut f = BufWriter::new(File::create(out.join("report.json"))?);
    serde_json::to_writer_pretty(&mut f, &report)?;
    writeln!(f)?;
    f.flush()?;
    Ok(report)
}
