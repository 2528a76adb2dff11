//! Run sets: (algorithm, load, seed) grids, parameter sweeps, and the
//! aggregate tables built from them.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, TopologyConfig};
use crate::controller::Algorithm;
use crate::error::{Error, Result};
use crate::flowsim::EventLog;
use crate::metrics::{mean, percentile, to_csv, write_atomic, write_run, RunResult, RunSummary};
use crate::sim::{simulate, SimConfig};
use crate::workload::{generate_trace, read_trace, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    Load,
    Oversubscription,
    Lambda,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "load" => Ok(SweepAxis::Load),
            "oversubscription" => Ok(SweepAxis::Oversubscription),
            "lambda" | "threshold" => Ok(SweepAxis::Lambda),
            _ => Err(Error::Config(format!("unknown sweep axis {s:?}"))),
        }
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Load => "load",
            SweepAxis::Oversubscription => "oversubscription",
            SweepAxis::Lambda => "lambda",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    /// Sweep cell label; empty for a plain run.
    pub cell: String,
    pub algorithm: Algorithm,
    pub load: f64,
    pub seed: u64,
    pub topology: TopologyConfig,
    pub threshold: Option<usize>,
}

impl RunSpec {
    /// Output directory relative to the experiment root.
    pub fn dir(&self) -> PathBuf {
        let mut p = PathBuf::new();
        if !self.cell.is_empty() {
            p.push(&self.cell);
        }
        p.push(self.algorithm.name());
        p.push(format!("load-{:.2}", self.load));
        p.push(format!("seed-{}", self.seed));
        p
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub spec: RunSpec,
    pub result: RunResult,
    pub summary: RunSummary,
}

/// Every (algorithm, load, seed) combination; seeds are `base + index`.
pub fn experiment_specs(cfg: &ExperimentConfig, algorithms: Option<&[Algorithm]>, seeds: Option<usize>) -> Vec<RunSpec> {
    let algs = algorithms.unwrap_or(&cfg.algorithms);
    let n = seeds.unwrap_or(cfg.trace.seeds);
    let mut out = Vec::new();
    for &algorithm in algs {
        for &load in &cfg.trace.loads {
            for i in 0..n {
                out.push(RunSpec {
                    cell: String::new(),
                    algorithm,
                    load,
                    seed: cfg.seed + i as u64,
                    topology: cfg.topology.clone(),
                    threshold: cfg.controller.threshold,
                });
            }
        }
    }
    out
}

pub fn sweep_specs(cfg: &ExperimentConfig, axis: SweepAxis) -> Result<Vec<RunSpec>> {
    let base = experiment_specs(cfg, None, None);
    match axis {
        SweepAxis::Load => Ok(base),
        SweepAxis::Oversubscription => {
            if cfg.sweep.oversubscription.is_empty() {
                return Err(Error::Config("sweep.oversubscription is empty".into()));
            }
            let mut out = Vec::new();
            for &r in &cfg.sweep.oversubscription {
                let topo = cfg.topology.with_oversubscription(r)?;
                out.extend(base.iter().cloned().map(|s| RunSpec {
                    cell: format!("oversub-{r}"),
                    topology: topo.clone(),
                    ..s
                }));
            }
            Ok(out)
        }
        SweepAxis::Lambda => {
            if cfg.sweep.thresholds.is_empty() {
                return Err(Error::Config("sweep.thresholds is empty".into()));
            }
            let mut out = Vec::new();
            for &l in &cfg.sweep.thresholds {
                out.extend(base.iter().cloned().map(|s| RunSpec {
                    cell: format!("lambda-{l}"),
                    threshold: Some(l),
                    ..s
                }));
            }
            Ok(out)
        }
    }
}

pub fn make_trace(cfg: &ExperimentConfig, spec: &RunSpec) -> Result<Trace> {
    let topo = spec.topology.build()?;
    match &cfg.trace.file {
        Some(path) => {
            let f = File::open(path).map_err(|e| Error::Config(format!("cannot open trace {}: {e}", path.display())))?;
            read_trace(BufReader::new(f), spec.load, spec.seed)
        }
        None => generate_trace(&cfg.models(), &topo, &cfg.trace.trace_config(), spec.load, spec.seed),
    }
}

pub fn run_one(cfg: &ExperimentConfig, spec: &RunSpec, log: EventLog) -> Result<RunOutput> {
    let topology = spec.topology.build()?;
    let mut controller = cfg.controller_for(spec.algorithm)?;
    controller.threshold = spec.threshold;
    let sim = SimConfig {
        topology: topology.clone(),
        controller: controller.clone(),
        options: cfg.sim.clone(),
    };
    let trace = make_trace(cfg, spec)?;
    let result = simulate(&sim, &trace.jobs, log)?;
    let summary = RunSummary::new(
        spec.algorithm.name(),
        spec.load,
        spec.seed,
        controller.threshold_for(&topology),
        topology.uplinks_per_tor,
        &result,
    );
    Ok(RunOutput {
        spec: spec.clone(),
        result,
        summary,
    })
}

/// Runs independent simulations in parallel. With `out`, each run's files
/// land in its own directory as soon as it finishes.
pub fn run_specs(cfg: &ExperimentConfig, specs: &[RunSpec], out: Option<&Path>, event_logs: bool) -> Result<Vec<RunOutput>> {
    specs
        .par_iter()
        .map(|spec| {
            let dir = out.map(|o| o.join(spec.dir()));
            let log = match (&dir, event_logs) {
                (Some(d), true) => {
                    std::fs::create_dir_all(d)?;
                    EventLog::with_sink(Box::new(BufWriter::new(File::create(d.join("events.log"))?)))
                }
                _ => EventLog::default(),
            };
            let r = run_one(cfg, spec, log)?;
            if let Some(d) = dir {
                write_run(&d, &r.result, &r.summary)?;
            }
            Ok(r)
        })
        .collect()
}

/// Pooled statistics of one (cell, algorithm, load) group across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub cell: String,
    pub algorithm: String,
    pub load: f64,
    pub uplinks_per_tor: usize,
    pub threshold: usize,
    pub runs: usize,
    pub jobs: usize,
    pub mean_slowdown: Option<f64>,
    pub p50_slowdown: Option<f64>,
    pub p90_slowdown: Option<f64>,
    pub p99_slowdown: Option<f64>,
    pub defrag_events: usize,
    pub total_moves: usize,
    pub mean_moves: Option<f64>,
    pub max_downtime_fraction: Option<f64>,
}

pub const AGGREGATE_COLUMNS: &[&str] = &[
    "cell",
    "algorithm",
    "load",
    "uplinks_per_tor",
    "threshold",
    "runs",
    "jobs",
    "mean_slowdown",
    "p50_slowdown",
    "p90_slowdown",
    "p99_slowdown",
    "defrag_events",
    "total_moves",
    "mean_moves",
    "max_downtime_fraction",
];

pub fn aggregate(outputs: &[RunOutput]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(String, usize, u64), Vec<&RunOutput>> = BTreeMap::new();
    for o in outputs {
        let alg_idx = Algorithm::ALL.iter().position(|a| *a == o.spec.algorithm).unwrap_or(0);
        groups
            .entry((o.spec.cell.clone(), alg_idx, o.spec.load.to_bits()))
            .or_default()
            .push(o);
    }
    groups
        .into_values()
        .map(|runs| {
            let first = &runs[0];
            let slow: Vec<f64> = runs.iter().flat_map(|r| r.result.jobs.iter().map(|j| j.slowdown)).collect();
            let moves: Vec<f64> = runs
                .iter()
                .flat_map(|r| r.result.defrag.iter().map(|d| d.move_count as f64))
                .collect();
            AggregateRow {
                cell: first.spec.cell.clone(),
                algorithm: first.spec.algorithm.name().to_string(),
                load: first.spec.load,
                uplinks_per_tor: first.summary.uplinks_per_tor,
                threshold: first.summary.threshold,
                runs: runs.len(),
                jobs: slow.len(),
                mean_slowdown: mean(&slow),
                p50_slowdown: percentile(&slow, 50.0),
                p90_slowdown: percentile(&slow, 90.0),
                p99_slowdown: percentile(&slow, 99.0),
                defrag_events: moves.len(),
                total_moves: moves.iter().sum::<f64>() as usize,
                mean_moves: mean(&moves),
                max_downtime_fraction: runs
                    .iter()
                    .filter_map(|r| r.summary.max_downtime_fraction)
                    .max_by(f64::total_cmp),
            }
        })
        .collect()
}

pub fn write_aggregate(out: &Path, rows: &[AggregateRow]) -> Result<()> {
    write_atomic(&out.join("aggregate.csv"), &to_csv(rows, AGGREGATE_COLUMNS)?)?;
    let mut json = serde_json::to_vec_pretty(rows)?;
    json.push(b'\n');
    write_atomic(&out.join("aggregate.json"), &json)
}
