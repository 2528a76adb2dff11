//! Minimum-migration defragmentation.
//!
//! Given the current rack-level placement `w0(s, t)` of every stage `s`, find
//! a placement `w` that keeps each stage's size, respects rack capacity and
//! keeps the weighted count of fragmented stages on every rack at or below
//! the threshold, while minimising `1/2 * sum |w - w0|`.
//!
//! [`solve`] runs an exact iterative-deepening branch-and-bound seeded with
//! a greedy incumbent; [`brute_force_min_moves`] is an independent
//! enumeration used to validate it.

mod brute;
mod greedy;
mod search;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use brute::{brute_force_min_moves, BRUTE_FORCE_LIMIT};
pub use greedy::greedy_incumbent;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverJob {
    pub id: u64,
    pub size: usize,
    /// Rings contributed per rack when fragmented.
    pub weight: usize,
    pub initial: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverInstance {
    pub racks: usize,
    pub capacity: usize,
    pub threshold: usize,
    pub jobs: Vec<SolverJob>,
}

impl SolverInstance {
    pub fn validate(&self) -> Result<()> {
        if self.racks == 0 || self.capacity == 0 {
            return Err(Error::Placement("instance needs at least one rack and slot".into()));
        }
        let mut load = vec![0usize; self.racks];
        for j in &self.jobs {
            if j.initial.len() != self.racks {
                return Err(Error::Placement(format!("job {} row has wrong length", j.id)));
            }
            if j.initial.iter().sum::<usize>() != j.size || j.size == 0 || j.weight == 0 {
                return Err(Error::Placement(format!("job {} row does not match its size", j.id)));
            }
            for (t, &c) in j.initial.iter().enumerate() {
                load[t] += c;
            }
        }
        if let Some(t) = (0..self.racks).find(|&t| load[t] > self.capacity) {
            return Err(Error::Placement(format!("rack {t} starts over capacity")));
        }
        Ok(())
    }

    pub fn max_weight(&self) -> usize {
        self.jobs.iter().map(|j| j.weight).max().unwrap_or(0)
    }

    /// Whether the sequential-fill argument guarantees a feasible answer.
    pub fn guaranteed_feasible(&self) -> bool {
        let total: usize = self.jobs.iter().map(|j| j.size).sum();
        self.threshold >= 2 * self.max_weight() && total <= self.racks * self.capacity
    }

    pub fn initial_rows(&self) -> Vec<Vec<usize>> {
        self.jobs.iter().map(|j| j.initial.clone()).collect()
    }

    /// Racks over capacity or over the fragmentation threshold.
    pub fn violations(&self, rows: &[Vec<usize>]) -> Vec<usize> {
        let (load, frag) = self.load_and_frag(rows);
        (0..self.racks)
            .filter(|&t| load[t] > self.capacity || frag[t] > self.threshold)
            .collect()
    }

    pub fn load_and_frag(&self, rows: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>) {
        let mut load = vec![0; self.racks];
        let mut frag = vec![0; self.racks];
        for (j, row) in self.jobs.iter().zip(rows) {
            let fragmented = crate::fragmentation::is_fragmented(row);
            for (t, &c) in row.iter().enumerate() {
                load[t] += c;
                if fragmented && c > 0 {
                    frag[t] += j.weight;
                }
            }
        }
        (load, frag)
    }

    /// `1/2 * sum |w - w0|`.
    pub fn move_cost(&self, rows: &[Vec<usize>]) -> usize {
        self.jobs
            .iter()
            .zip(rows)
            .map(|(j, r)| row_cost(&j.initial, r))
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let inst: SolverInstance = serde_json::from_str(s)?;
        inst.validate()?;
        Ok(inst)
    }
}

/// Units moved into new racks; equals units moved out since sizes match.
pub fn row_cost(initial: &[usize], row: &[usize]) -> usize {
    initial.iter().zip(row).map(|(&a, &b)| b.saturating_sub(a)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RackMove {
    pub job: u64,
    pub count: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub move_count: usize,
    /// Wall-clock seconds.
    pub solve_time: f64,
    pub nodes_explored: u64,
    pub optimal: bool,
    pub lower_bound: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationPlan {
    pub target: Vec<Vec<usize>>,
    pub moves: Vec<RackMove>,
    pub move_count: usize,
    pub stats: SolverStats,
}

impl MigrationPlan {
    fn build(inst: &SolverInstance, target: Vec<Vec<usize>>, stats: SolverStats) -> Self {
        let mut moves = Vec::new();
        for (j, row) in inst.jobs.iter().zip(&target) {
            let mut outs: Vec<(usize, usize)> = (0..inst.racks)
                .filter(|&t| j.initial[t] > row[t])
                .map(|t| (t, j.initial[t] - row[t]))
                .collect();
            let ins = (0..inst.racks)
                .filter(|&t| row[t] > j.initial[t])
                .map(|t| (t, row[t] - j.initial[t]));
            let mut oi = 0;
            for (to, mut need) in ins {
                while need > 0 {
                    let (from, avail) = &mut outs[oi];
                    let k = need.min(*avail);
                    moves.push(RackMove {
                        job: j.id,
                        count: k,
                        from: *from,
                        to,
                    });
                    need -= k;
                    *avail -= k;
                    if *avail == 0 {
                        oi += 1;
                    }
                }
            }
        }
        let move_count = inst.move_cost(&target);
        MigrationPlan {
            target,
            moves,
            move_count,
            stats: SolverStats { move_count, ..stats },
        }
    }

    /// Applies the move list to the initial rows.
    pub fn apply_moves(inst: &SolverInstance, moves: &[RackMove]) -> Vec<Vec<usize>> {
        let mut rows = inst.initial_rows();
        for m in moves {
            let i = inst.jobs.iter().position(|j| j.id == m.job).expect("move of unknown job");
            rows[i][m.from] -= m.count;
            rows[i][m.to] += m.count;
        }
        rows
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    /// Deterministic work bound; the incumbent is returned when reached.
    pub node_limit: u64,
    pub time_limit: Duration,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            node_limit: 20_000_000,
            time_limit: Duration::from_secs(30),
        }
    }
}

/// Exact minimum-migration placement, or the best incumbent flagged
/// non-optimal when a limit is reached.
pub fn solve(inst: &SolverInstance, opts: &SolverOptions) -> Result<MigrationPlan> {
    inst.validate()?;
    let start = Instant::now();
    let rows0 = inst.initial_rows();
    if inst.violations(&rows0).is_empty() {
        let stats = SolverStats {
            move_count: 0,
            solve_time: start.elapsed().as_secs_f64(),
            nodes_explored: 0,
            optimal: true,
            lower_bound: 0,
        };
        return Ok(MigrationPlan::build(inst, rows0, stats));
    }
    let incumbent = greedy_incumbent(inst);
    let out = search::Search::new(inst, opts, start).run(incumbent.as_ref().map(|r| inst.move_cost(r)));
    let stats = |optimal| SolverStats {
        move_count: 0,
        solve_time: start.elapsed().as_secs_f64(),
        nodes_explored: out.nodes,
        optimal,
        lower_bound: out.lower_bound,
    };
    match (out.best, incumbent) {
        (Some(rows), _) => Ok(MigrationPlan::build(inst, rows, stats(true))),
        (None, Some(rows)) => Ok(MigrationPlan::build(inst, rows, stats(out.complete))),
        (None, None) if out.complete => Err(Error::Infeasible(format!(
            "no placement satisfies threshold {} with capacity {}",
            inst.threshold, inst.capacity
        ))),
        (None, None) => Err(Error::Infeasible("search limit reached without a feasible placement".into())),
    }
}

#[cfg(test)]
mod tests;
