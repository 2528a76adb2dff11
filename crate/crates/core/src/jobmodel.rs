//! Per-job iteration state machine and worker migration tasks.
//!
//! An iteration runs compute alongside the pipeline transfer chain
//! (forward then backward boundaries, one after another); once both are
//! done the DP rings of every stage run at once. Migrations pause a job at
//! the end of an iteration, copy checkpoints, wait for destination hosts to
//! empty, and resume after a fixed re-initialisation delay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::routing::{DemandKey, DpDemand};
use crate::topology::{ClusterTopology, HostId};
use crate::workload::{pp_traffic, replica_groups, ring_hops, GpuDemand, JobId, JobLayout, JobSpec};

/// Default pause between the last checkpoint arriving and training resuming.
pub const DEFAULT_REINIT_SECONDS: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JobPhase {
    /// Admitted, first iteration not started.
    Pending,
    /// Compute and pipeline transfers.
    Forward,
    /// DP rings.
    Collective,
    /// Paused at an iteration boundary for migration.
    AtBarrier,
    Finished,
}

/// What the caller must do next for a job.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobAction {
    ScheduleCompute,
    /// Send the pipeline transfer with this index (see [`pp_step_flows`]).
    SendPp(usize),
    SendDp,
    ReachedBarrier,
    Finished,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JobState {
    pub spec: JobSpec,
    pub phase: JobPhase,
    pub iteration: u64,
    pub admitted_at: f64,
    pub ideal_duration: f64,
    compute_pending: bool,
    pp_next: usize,
    pp_total: usize,
    flows_pending: usize,
    pause_requested: bool,
    pub barrier_at: Option<f64>,
    pub downtime: f64,
    pub hosts_moved: usize,
    pub defrag_events: usize,
    pub finished_at: Option<f64>,
}

impl JobState {
    pub fn new(spec: JobSpec, topo: &ClusterTopology, admitted_at: f64) -> Self {
        let pp_total = if spec.pp_degree >= 2 { 2 * (spec.pp_degree - 1) } else { 0 };
        JobState {
            ideal_duration: spec.ideal_duration(topo),
            spec,
            phase: JobPhase::Pending,
            iteration: 0,
            admitted_at,
            compute_pending: false,
            pp_next: 0,
            pp_total,
            flows_pending: 0,
            pause_requested: false,
            barrier_at: None,
            downtime: 0.0,
            hosts_moved: 0,
            defrag_events: 0,
            finished_at: None,
        }
    }

    pub fn id(&self) -> JobId {
        self.spec.job_id
    }

    pub fn flows_pending(&self) -> usize {
        self.flows_pending
    }

    pub fn pause_requested(&self) -> bool {
        self.pause_requested
    }

    pub fn begin_iteration(&mut self) -> Vec<JobAction> {
        self.phase = JobPhase::Forward;
        self.compute_pending = true;
        self.pp_next = 0;
        let mut out = vec![JobAction::ScheduleCompute];
        if self.pp_total > 0 {
            out.push(JobAction::SendPp(0));
        }
        out
    }

    /// Starts the job unless a migration already claimed it.
    pub fn start(&mut self, now: f64) -> Vec<JobAction> {
        debug_assert_eq!(self.phase, JobPhase::Pending);
        if self.pause_requested {
            self.phase = JobPhase::AtBarrier;
            self.barrier_at = Some(now);
            return vec![JobAction::ReachedBarrier];
        }
        self.begin_iteration()
    }

    /// Asks the job to stop at its next iteration boundary. A job that has
    /// not started yet is at a boundary already.
    pub fn request_pause(&mut self, now: f64) -> Option<JobAction> {
        self.pause_requested = true;
        if self.phase == JobPhase::Pending {
            self.phase = JobPhase::AtBarrier;
            self.barrier_at = Some(now);
            return Some(JobAction::ReachedBarrier);
        }
        None
    }

    pub fn compute_done(&mut self) -> Vec<JobAction> {
        self.compute_pending = false;
        if self.pp_next >= self.pp_total && self.flows_pending == 0 {
            self.phase = JobPhase::Collective;
            return vec![JobAction::SendDp];
        }
        Vec::new()
    }

    /// Records how many flows a Send action produced.
    pub fn step_sent(&mut self, flows: usize) -> Vec<JobAction> {
        self.flows_pending = flows;
        if flows == 0 {
            self.step_finished()
        } else {
            Vec::new()
        }
    }

    pub fn flow_done(&mut self) -> Result<Vec<JobAction>> {
        if self.flows_pending == 0 {
            return Err(Error::Invariant(format!("job {}: flow completed with none pending", self.id())));
        }
        self.flows_pending -= 1;
        Ok(if self.flows_pending == 0 { self.step_finished() } else { Vec::new() })
    }

    fn step_finished(&mut self) -> Vec<JobAction> {
        match self.phase {
            JobPhase::Forward => {
                self.pp_next += 1;
                if self.pp_next < self.pp_total {
                    vec![JobAction::SendPp(self.pp_next)]
                } else if !self.compute_pending {
                    self.phase = JobPhase::Collective;
                    vec![JobAction::SendDp]
                } else {
                    Vec::new()
                }
            }
            JobPhase::Collective => {
                self.iteration += 1;
                if self.iteration >= self.spec.iterations {
                    self.phase = JobPhase::Finished;
                    vec![JobAction::Finished]
                } else if self.pause_requested {
                    self.phase = JobPhase::AtBarrier;
                    vec![JobAction::ReachedBarrier]
                } else {
                    self.begin_iteration()
                }
            }
            _ => Vec::new(),
        }
    }

    pub fn mark_barrier(&mut self, now: f64) {
        self.barrier_at = Some(now);
    }

    pub fn finish(&mut self, now: f64) {
        self.phase = JobPhase::Finished;
        self.finished_at = Some(now);
    }

    pub fn resume(&mut self, now: f64) -> Result<Vec<JobAction>> {
        if self.phase != JobPhase::AtBarrier {
            return Err(Error::Invariant(format!("job {} resumed while {:?}", self.id(), self.phase)));
        }
        let since = self.barrier_at.take().unwrap_or(now);
        self.downtime += now - since;
        self.pause_requested = false;
        Ok(self.begin_iteration())
    }

    /// Runtime from admission over the isolated ideal.
    pub fn slowdown(&self) -> Option<f64> {
        let end = self.finished_at?;
        Some(if self.ideal_duration > 0.0 { (end - self.admitted_at) / self.ideal_duration } else { 1.0 })
    }
}

/// Cross-host ring hops of every replica group, keyed for routing.
pub fn dp_step_flows(job: &JobSpec, layout: &JobLayout, topo: &ClusterTopology) -> Result<Vec<(DemandKey, GpuDemand)>> {
    let mut out = Vec::new();
    for g in replica_groups(job, layout, topo) {
        for (hop, d) in ring_hops(&g, topo)?.into_iter().enumerate() {
            let key = DemandKey {
                job: job.job_id,
                stage: g.stage,
                group: g.index,
                hop,
            };
            out.push((key, d));
        }
    }
    Ok(out)
}

/// The cross-rack subset of [`dp_step_flows`], as routing demands.
pub fn dp_demands(job: &JobSpec, layout: &JobLayout, topo: &ClusterTopology) -> Result<Vec<DpDemand>> {
    let utilization = job.gpu_utilization(topo);
    Ok(dp_step_flows(job, layout, topo)?
        .into_iter()
        .map(|(key, d)| DpDemand {
            key,
            src: d.src,
            dst: d.dst,
            src_rack: topo.rack_of_gpu(d.src),
            dst_rack: topo.rack_of_gpu(d.dst),
            utilization,
        })
        .filter(|d| d.src_rack != d.dst_rack)
        .collect())
}

/// Host-pair flows of the `index`-th pipeline transfer; pairs on the same
/// host need no network.
pub fn pp_step_flows(job: &JobSpec, layout: &JobLayout, topo: &ClusterTopology, index: usize) -> Vec<GpuDemand> {
    pp_traffic(job, layout, topo)
        .into_iter()
        .nth(index)
        .map(|d| {
            d.flows
                .into_iter()
                .filter(|f| topo.host_of_gpu(f.src) != topo.host_of_gpu(f.dst))
                .collect()
        })
        .unwrap_or_default()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MovePhase {
    /// Waiting for the job's iteration barrier, or for the previous leg of
    /// a staged move.
    AwaitBarrier,
    Transfer,
    AwaitDstFree,
    /// Arrived; waiting for the job's re-initialisation to finish.
    Reinit,
    Done,
}

/// One host's worth of workers (one per GPU) changing host.
#[derive(Debug, Clone, PartialEq)]
pub struct MigrationTask {
    pub job: JobId,
    pub stage: usize,
    pub src: HostId,
    pub dst: HostId,
    pub phase: MovePhase,
    /// Checkpoint bytes per GPU.
    pub shard_bytes: f64,
    /// Task that must arrive before this one may transfer.
    pub after: Option<usize>,
    /// Release `src` as soon as the checkpoint has left it.
    pub release_early: bool,
    pub flows_pending: usize,
    pub start: Option<f64>,
    pub end: Option<f64>,
}

impl MigrationTask {
    pub fn new(job: JobId, stage: usize, src: HostId, dst: HostId, shard_bytes: f64) -> Self {
        MigrationTask {
            job,
            stage,
            src,
            dst,
            phase: MovePhase::AwaitBarrier,
            shard_bytes,
            after: None,
            release_early: false,
            flows_pending: 0,
            start: None,
            end: None,
        }
    }

    pub fn advance(&mut self, to: MovePhase) -> Result<()> {
        if to <= self.phase {
            return Err(Error::Invariant(format!(
                "migration of job {} host {} -> {}: {:?} after {:?}",
                self.job, self.src.0, self.dst.0, to, self.phase
            )));
        }
        self.phase = to;
        Ok(())
    }
}

/// Breaks cycles in the "waits for destination" relation (task `a` waits
/// for `b` when `a.dst == b.src`). In each cycle the first task is routed
/// through a free host taken from `spare`: a first leg to the spare host,
/// and a second leg, ordered after it, to the real destination. Without a
/// spare host the first task releases its source once its checkpoint is
/// out instead. Returns the spare hosts used, with their owning job.
pub fn break_cycles(tasks: &mut Vec<MigrationTask>, spare: &mut Vec<HostId>) -> Vec<(HostId, JobId)> {
    let by_src: BTreeMap<HostId, usize> = tasks.iter().enumerate().map(|(i, t)| (t.src, i)).collect();
    let n = tasks.len();
    let mut state = vec![0u8; n]; // 0 new, 1 on current walk, 2 done
    let mut heads = Vec::new();
    for i in 0..n {
        let mut walk = Vec::new();
        let mut cur = Some(i);
        while let Some(c) = cur {
            if state[c] == 2 {
                break;
            }
            if state[c] == 1 {
                let pos = walk.iter().position(|&x| x == c).expect("on walk");
                heads.push(*walk[pos..].iter().min().expect("non-empty cycle"));
                break;
            }
            state[c] = 1;
            walk.push(c);
            cur = by_src.get(&tasks[c].dst).copied();
        }
        for c in walk {
            state[c] = 2;
        }
    }
    heads.sort();
    spare.sort_by(|a, b| b.cmp(a));
    let mut used = Vec::new();
    for h in heads {
        match spare.pop() {
            Some(f) => {
                let mut second = tasks[h].clone();
                second.src = f;
                second.after = Some(h);
                tasks[h].dst = f;
                used.push((f, tasks[h].job));
                tasks.push(second);
            }
            None => tasks[h].release_early = true,
        }
    }
    used
}
