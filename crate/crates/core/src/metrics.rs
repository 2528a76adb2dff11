//! Result records, aggregation, and file output.
//!
//! Column order of every CSV follows the field order of its record type.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobRecord {
    pub job_id: u64,
    pub template: String,
    pub gpus: usize,
    pub dp: usize,
    pub tp: usize,
    pub pp: usize,
    pub iterations: u64,
    pub arrival: f64,
    pub admitted: f64,
    pub finished: f64,
    pub ideal_seconds: f64,
    pub actual_seconds: f64,
    pub slowdown: f64,
    pub defrag_events: usize,
    pub hosts_moved: usize,
    pub downtime_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FragSample {
    pub time: f64,
    pub max_degree: usize,
    pub fragmented_groups: usize,
    pub violating_racks: usize,
    pub active_jobs: usize,
    pub busy_hosts: usize,
}

/// One triggered defragmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefragRecord {
    pub event: u64,
    pub time: f64,
    pub trigger_job: u64,
    pub violating_racks: usize,
    pub move_count: usize,
    pub jobs_moved: usize,
    pub nodes: u64,
    pub optimal: bool,
    pub lower_bound: usize,
    pub completed: Option<f64>,
}

/// One job's part in a defragmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationRecord {
    pub event: u64,
    pub job_id: u64,
    pub hosts_moved: usize,
    pub planned: f64,
    pub barrier: f64,
    pub resumed: f64,
    pub duration_seconds: f64,
    pub downtime_seconds: f64,
}

/// Solver call log. `solve_seconds` is wall-clock time and is the only
/// field that differs between reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverRecord {
    pub time: f64,
    pub stages: usize,
    pub threshold: usize,
    pub move_count: Option<usize>,
    pub nodes: u64,
    pub optimal: bool,
    pub solve_seconds: f64,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilSample {
    pub time: f64,
    /// Mean over ToR uplinks of both directions.
    pub mean_uplink_util: f64,
    pub max_uplink_util: f64,
    pub dp_flows: usize,
}

/// Engine-level counters of one run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    /// Lines written to the event log.
    pub events: u64,
    /// Handled events: queue pops plus individual flow completions.
    pub processed: u64,
    pub event_hash: String,
    pub rate_updates: u64,
    pub end_time: f64,
    pub isolation_checks: u64,
    pub isolation_violations: u64,
    pub conservation_checks: u64,
    pub conservation_failures: u64,
    pub unsolvable: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub jobs: Vec<JobRecord>,
    pub fragmentation: Vec<FragSample>,
    pub defrag: Vec<DefragRecord>,
    pub migrations: Vec<MigrationRecord>,
    pub solver: Vec<SolverRecord>,
    pub utilization: Vec<UtilSample>,
    pub stats: RunStats,
}

/// Nearest-rank percentile of `p` in (0, 100]; None for empty input.
pub fn percentile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    Some(v[rank.min(v.len()) - 1])
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SlowdownStats {
    pub count: usize,
    pub mean: Option<f64>,
    pub p50: Option<f64>,
    pub p90: Option<f64>,
    pub p99: Option<f64>,
    pub max: Option<f64>,
}

impl SlowdownStats {
    pub fn from_jobs(jobs: &[JobRecord]) -> Self {
        let s: Vec<f64> = jobs.iter().map(|j| j.slowdown).collect();
        SlowdownStats {
            count: s.len(),
            mean: mean(&s),
            p50: percentile(&s, 50.0),
            p90: percentile(&s, 90.0),
            p99: percentile(&s, 99.0),
            max: s.iter().copied().max_by(f64::total_cmp),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub load: f64,
    pub seed: u64,
    pub threshold: usize,
    pub uplinks_per_tor: usize,
    pub slowdown: SlowdownStats,
    pub defrag_events: usize,
    pub total_moves: usize,
    pub mean_moves: Option<f64>,
    pub hosts_migrated: usize,
    pub max_downtime_fraction: Option<f64>,
    pub max_fragmentation: usize,
    pub stats: RunStats,
}

impl RunSummary {
    pub fn new(algorithm: &str, load: f64, seed: u64, threshold: usize, uplinks: usize, r: &RunResult) -> Self {
        let moves: Vec<f64> = r.defrag.iter().map(|d| d.move_count as f64).collect();
        RunSummary {
            algorithm: algorithm.to_string(),
            load,
            seed,
            threshold,
            uplinks_per_tor: uplinks,
            slowdown: SlowdownStats::from_jobs(&r.jobs),
            defrag_events: r.defrag.len(),
            total_moves: r.defrag.iter().map(|d| d.move_count).sum(),
            mean_moves: mean(&moves),
            hosts_migrated: r.migrations.iter().map(|m| m.hosts_moved).sum(),
            max_downtime_fraction: r
                .jobs
                .iter()
                .filter(|j| j.ideal_seconds > 0.0)
                .map(|j| j.downtime_seconds / j.ideal_seconds)
                .max_by(f64::total_cmp),
            max_fragmentation: r.fragmentation.iter().map(|f| f.max_degree).max().unwrap_or(0),
            stats: r.stats.clone(),
        }
    }
}

/// Writes via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}

pub const JOB_COLUMNS: &[&str] = &[
    "job_id",
    "template",
    "gpus",
    "dp",
    "tp",
    "pp",
    "iterations",
    "arrival",
    "admitted",
    "finished",
    "ideal_seconds",
    "actual_seconds",
    "slowdown",
    "defrag_events",
    "hosts_moved",
    "downtime_seconds",
];
pub const FRAG_COLUMNS: &[&str] = &[
    "time",
    "max_degree",
    "fragmented_groups",
    "violating_racks",
    "active_jobs",
    "busy_hosts",
];
pub const DEFRAG_COLUMNS: &[&str] = &[
    "event",
    "time",
    "trigger_job",
    "violating_racks",
    "move_count",
    "jobs_moved",
    "nodes",
    "optimal",
    "lower_bound",
    "completed",
];
pub const MIGRATION_COLUMNS: &[&str] = &[
    "event",
    "job_id",
    "hosts_moved",
    "planned",
    "barrier",
    "resumed",
    "duration_seconds",
    "downtime_seconds",
];
pub const SOLVER_COLUMNS: &[&str] = &[
    "time",
    "stages",
    "threshold",
    "move_count",
    "nodes",
    "optimal",
    "solve_seconds",
    "status",
];
pub const UTIL_COLUMNS: &[&str] = &["time", "mean_uplink_util", "max_uplink_util", "dp_flows"];

/// Writes every table of a run plus `summary.json` into `dir`.
pub fn write_run(dir: &Path, r: &RunResult, summary: &RunSummary) -> Result<()> {
    write_atomic(&dir.join("jobs.csv"), &to_csv(&r.jobs, JOB_COLUMNS)?)?;
    write_atomic(&dir.join("fragmentation.csv"), &to_csv(&r.fragmentation, FRAG_COLUMNS)?)?;
    write_atomic(&dir.join("defrag.csv"), &to_csv(&r.defrag, DEFRAG_COLUMNS)?)?;
    write_atomic(&dir.join("migrations.csv"), &to_csv(&r.migrations, MIGRATION_COLUMNS)?)?;
    write_atomic(&dir.join("solver.csv"), &to_csv(&r.solver, SOLVER_COLUMNS)?)?;
    if !r.utilization.is_empty() {
        write_atomic(&dir.join("utilization.csv"), &to_csv(&r.utilization, UTIL_COLUMNS)?)?;
    }
    let mut json = serde_json::to_vec_pretty(summary)?;
    json.push(b'\n');
    write_atomic(&dir.join("summary.json"), &json)
}
