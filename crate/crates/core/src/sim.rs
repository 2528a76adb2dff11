//! The event loop: arrivals, job iterations, flows, routing updates and
//! migrations for one (topology, controller, trace) run.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::controller::{Controller, ControllerConfig, Decision, DefragPlan};
use crate::error::{Error, Result};
use crate::flowsim::{EventLog, EventQueue, FlowId, FlowKind, FlowOwner, Network};
use crate::fragmentation::{fragmentation_degree, threshold_violated};
use crate::jobmodel::{
    break_cycles, dp_demands, dp_step_flows, pp_step_flows, JobAction, JobPhase, JobState, MigrationTask, MovePhase,
};
use crate::metrics::{
    DefragRecord, FragSample, JobRecord, MigrationRecord, RunResult, SolverRecord, UtilSample,
};
use crate::routing::{shared_uplinks, DemandKey, DpDemand, Router, RoutingStrategy};
use crate::scheduler::{HostState, PlaceOutcome, Placement};
use crate::solver::SolverStats;
use crate::topology::{ClusterTopology, GpuId, HostId};
use crate::workload::{GpuDemand, JobId, JobLayout, JobSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct SimOptions {
    /// Run the link-capacity and delivered-bytes check after every event.
    pub check_conservation: bool,
    /// Verify host bookkeeping whenever no migration is in flight.
    pub check_placement: bool,
    /// Seconds between uplink utilization samples; off when unset.
    pub util_sample_interval: Option<f64>,
}


#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub topology: ClusterTopology,
    pub controller: ControllerConfig,
    pub options: SimOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Compute(JobId),
    Resume(JobId),
    Arrival(usize),
    PlanReady,
    SglbEpoch,
    Sample,
}

impl Event {
    fn rank(self) -> u8 {
        match self {
            Event::Compute(_) => 0,
            Event::Resume(_) => 1,
            Event::Arrival(_) => 2,
            Event::PlanReady => 3,
            Event::SglbEpoch => 4,
            Event::Sample => 5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum FlowTag {
    Job {
        job: JobId,
        key: Option<DemandKey>,
        src: GpuId,
        dst: GpuId,
    },
    Move(usize),
}

struct MovingJob {
    hosts: usize,
    planned: f64,
    resume_scheduled: bool,
}

struct Defrag {
    id: u64,
    record: usize,
    plan: Option<DefragPlan>,
    tasks: Vec<MigrationTask>,
    claims: BTreeMap<HostId, usize>,
    jobs: BTreeMap<JobId, MovingJob>,
}

impl Defrag {
    fn all_done(&self) -> bool {
        self.plan.is_none() && self.tasks.iter().all(|t| t.phase == MovePhase::Done)
    }
}

struct Engine<'a> {
    topo: ClusterTopology,
    opts: SimOptions,
    reinit: f64,
    charge_latency: bool,
    trace: &'a [JobSpec],
    placement: Placement,
    specs: BTreeMap<JobId, JobSpec>,
    states: BTreeMap<JobId, JobState>,
    targets: BTreeMap<JobId, JobLayout>,
    dp_cache: BTreeMap<JobId, Vec<(DemandKey, GpuDemand)>>,
    net: Network,
    queue: EventQueue<Event>,
    log: EventLog,
    router: Router,
    controller: Controller,
    flows: BTreeMap<FlowId, FlowTag>,
    defrag: Option<Defrag>,
    next_defrag: u64,
    deferred_trigger: Option<JobId>,
    demands: Vec<DpDemand>,
    sglb_pending: bool,
    finished: usize,
    out: RunResult,
}

/// Runs `jobs` (ordered by arrival) to completion.
pub fn simulate(cfg: &SimConfig, jobs: &[JobSpec], log: EventLog) -> Result<RunResult> {
    cfg.topology.validate()?;
    let max_tp = jobs.iter().map(|j| j.tp_degree).max().unwrap_or(1);
    cfg.controller.validate(&cfg.topology, max_tp)?;
    for w in jobs.windows(2) {
        if w[1].arrival_time < w[0].arrival_time {
            return Err(Error::Workload("trace is not sorted by arrival time".into()));
        }
    }
    let mut e = Engine {
        topo: cfg.topology.clone(),
        opts: cfg.options.clone(),
        reinit: cfg.controller.reinit_seconds,
        charge_latency: cfg.controller.charge_solver_latency,
        trace: jobs,
        placement: Placement::new(&cfg.topology),
        specs: BTreeMap::new(),
        states: BTreeMap::new(),
        targets: BTreeMap::new(),
        dp_cache: BTreeMap::new(),
        net: Network::new(&cfg.topology),
        queue: EventQueue::new(),
        log,
        router: Router::new(cfg.controller.routing, &cfg.topology, cfg.controller.sglb)?,
        controller: Controller::new(cfg.controller.clone(), &cfg.topology),
        flows: BTreeMap::new(),
        defrag: None,
        next_defrag: 0,
        deferred_trigger: None,
        demands: Vec::new(),
        sglb_pending: false,
        finished: 0,
        out: RunResult::default(),
    };
    e.run()?;
    Ok(e.out)
}

impl Engine<'_> {
    fn now(&self) -> f64 {
        self.net.now()
    }

    fn schedule(&mut self, at: f64, ev: Event) -> Result<()> {
        if at < self.now() {
            return Err(Error::Invariant(format!("event {ev:?} at {at} is before {}", self.now())));
        }
        self.queue.push(at, ev.rank(), ev)
    }

    fn note(&mut self, kind: &str, detail: std::fmt::Arguments<'_>) -> Result<()> {
        let now = self.now();
        self.log.record(now, kind, detail)
    }

    fn run(&mut self) -> Result<()> {
        for (i, j) in self.trace.iter().enumerate() {
            j.validate(&self.topo)?;
            self.queue.push(j.arrival_time, Event::Arrival(i).rank(), Event::Arrival(i))?;
        }
        if let Some(dt) = self.opts.util_sample_interval {
            if !(dt > 0.0) {
                return Err(Error::Config("util_sample_interval must be positive".into()));
            }
            if !self.trace.is_empty() {
                self.queue.push(0.0, Event::Sample.rank(), Event::Sample)?;
            }
        }
        loop {
            let tn = self.net.next_completion();
            let te = self.queue.peek().map(|p| p.0);
            let net_first = match (tn, te) {
                (None, None) => break,
                (Some(a), Some(b)) => a <= b,
                (Some(_), None) => true,
                (None, Some(_)) => false,
            };
            if net_first {
                self.net.advance_to(tn.expect("checked"))?;
                let done = self.net.take_completed();
                if done.is_empty() {
                    return Err(Error::Invariant("announced flow completion did not happen".into()));
                }
                for f in done {
                    self.on_flow_done(f.id)?;
                    self.check_conservation();
                }
            } else {
                let (t, ev) = self.queue.pop().expect("peeked");
                self.net.advance_to(t)?;
                self.handle(ev)?;
                self.check_conservation();
            }
            self.after_event()?;
        }
        if self.finished != self.trace.len() {
            return Err(Error::Invariant(format!(
                "{} of {} jobs never completed",
                self.trace.len() - self.finished,
                self.trace.len()
            )));
        }
        self.out.jobs.sort_by_key(|j| j.job_id);
        let s = &mut self.out.stats;
        s.events = self.log.count();
        s.event_hash = self.log.digest();
        s.rate_updates = self.net.rate_updates();
        s.end_time = self.net.now();
        self.log.flush()
    }

    fn handle(&mut self, ev: Event) -> Result<()> {
        match ev {
            Event::Arrival(i) => {
                let spec = self.trace[i].clone();
                self.note("arrival", format_args!("job={}", spec.job_id))?;
                match self.placement.place_job(&spec)? {
                    PlaceOutcome::Placed(hosts) => self.admit(spec, hosts)?,
                    PlaceOutcome::Queued => self.note("queued", format_args!("job={}", spec.job_id))?,
                }
            }
            Event::Compute(job) => {
                self.note("compute", format_args!("job={job}"))?;
                let acts = self.state(job)?.compute_done();
                self.run_actions(job, acts)?;
            }
            Event::Resume(job) => self.resume(job)?,
            Event::PlanReady => {
                let plan = self.defrag.as_mut().and_then(|d| d.plan.take());
                if let Some(p) = plan {
                    self.start_plan(p)?;
                }
            }
            Event::SglbEpoch => self.sglb_epoch()?,
            Event::Sample => self.sample()?,
        }
        Ok(())
    }

    fn state(&mut self, job: JobId) -> Result<&mut JobState> {
        self.states.get_mut(&job).ok_or(Error::UnknownJob(job.0))
    }

    fn layout(&self, job: JobId) -> Result<&JobLayout> {
        self.placement.layout(job).ok_or(Error::UnknownJob(job.0))
    }

    fn admit(&mut self, spec: JobSpec, hosts: Vec<HostId>) -> Result<()> {
        let id = spec.job_id;
        let list: Vec<String> = hosts.iter().map(|h| h.0.to_string()).collect();
        self.note("admit", format_args!("job={id} hosts={}", list.join(",")))?;
        let now = self.now();
        self.states.insert(id, JobState::new(spec.clone(), &self.topo, now));
        self.specs.insert(id, spec);
        self.frag_sample();
        let migrating = self.defrag.is_some();
        let d = self.controller.on_job_arrival(&self.placement, &self.specs, migrating)?;
        self.decide(d, id)?;
        self.refresh_routing()?;
        let st = self.state(id)?;
        if st.phase == JobPhase::Pending {
            let acts = st.start(now);
            self.run_actions(id, acts)?;
        }
        Ok(())
    }

    fn decide(&mut self, d: Decision, trigger: JobId) -> Result<()> {
        let now = self.now();
        let threshold = self.controller.threshold();
        match d {
            Decision::Compliant => Ok(()),
            Decision::Deferred => {
                self.deferred_trigger = Some(trigger);
                self.note("defer", format_args!("job={trigger}"))
            }
            Decision::Unsolvable { reason, stats, stages } => {
                self.out.stats.unsolvable += 1;
                self.out.solver.push(solver_row(now, stages, threshold, None, stats.as_ref(), "infeasible"));
                self.note("unsolvable", format_args!("job={trigger} {reason}"))
            }
            Decision::Plan(plan) => {
                self.out.solver.push(solver_row(
                    now,
                    plan.stages,
                    threshold,
                    Some(plan.move_count),
                    Some(&plan.stats),
                    "ok",
                ));
                let id = self.next_defrag;
                self.next_defrag += 1;
                self.out.defrag.push(DefragRecord {
                    event: id,
                    time: now,
                    trigger_job: trigger.0,
                    violating_racks: plan.violating_racks.len(),
                    move_count: plan.move_count,
                    jobs_moved: plan.jobs().len(),
                    nodes: plan.stats.nodes_explored,
                    optimal: plan.stats.optimal,
                    lower_bound: plan.stats.lower_bound,
                    completed: None,
                });
                self.note(
                    "plan",
                    format_args!("id={id} job={trigger} moves={} nodes={}", plan.move_count, plan.stats.nodes_explored),
                )?;
                let delay = if self.charge_latency { plan.stats.solve_time } else { 0.0 };
                self.defrag = Some(Defrag {
                    id,
                    record: self.out.defrag.len() - 1,
                    plan: None,
                    tasks: Vec::new(),
                    claims: BTreeMap::new(),
                    jobs: BTreeMap::new(),
                });
                if delay > 0.0 {
                    self.defrag.as_mut().expect("just set").plan = Some(plan);
                    self.schedule(now + delay, Event::PlanReady)
                } else {
                    self.start_plan(plan)
                }
            }
        }
    }

    fn start_plan(&mut self, plan: DefragPlan) -> Result<()> {
        let now = self.now();
        let mut tasks: Vec<MigrationTask> = plan
            .moves
            .iter()
            .map(|m| MigrationTask::new(m.job, m.stage, m.src, m.dst, self.specs[&m.job].shard_bytes))
            .collect();
        for t in &tasks {
            if self.placement.host_state(t.dst) == HostState::Free {
                self.placement.reserve(t.dst, t.job)?;
            }
        }
        let mut spare: Vec<HostId> = (0..self.topo.total_hosts())
            .map(HostId)
            .filter(|&h| self.placement.host_state(h) == HostState::Free)
            .collect();
        for (f, job) in break_cycles(&mut tasks, &mut spare) {
            self.placement.reserve(f, job)?;
            self.note("stage", format_args!("job={job} via={}", f.0))?;
        }
        let mut claims = BTreeMap::new();
        for (i, t) in tasks.iter().enumerate() {
            match self.placement.host_state(t.dst) {
                HostState::Reserved(j) if j == t.job => {}
                _ => {
                    claims.insert(t.dst, i);
                }
            }
        }
        let mut moving: BTreeMap<JobId, MovingJob> = BTreeMap::new();
        for m in &plan.moves {
            moving.entry(m.job).or_insert(MovingJob {
                hosts: 0,
                planned: now,
                resume_scheduled: false,
            }).hosts += 1;
            let target = match self.targets.get(&m.job) {
                Some(l) => l.clone(),
                None => self.layout(m.job)?.clone(),
            };
            let mut target = target;
            for h in target.stage_hosts[m.stage].iter_mut().filter(|h| **h == m.src) {
                *h = m.dst;
            }
            self.targets.insert(m.job, target);
        }
        for l in self.targets.values_mut() {
            for s in &mut l.stage_hosts {
                s.sort();
            }
        }
        for (job, mj) in &moving {
            let st = self.states.get_mut(job).ok_or(Error::UnknownJob(job.0))?;
            st.defrag_events += 1;
            st.hosts_moved += mj.hosts;
        }
        let d = self.defrag.as_mut().ok_or_else(|| Error::Invariant("plan without a defrag record".into()))?;
        d.tasks = tasks;
        d.claims = claims;
        d.jobs = moving;
        let jobs: Vec<JobId> = d.jobs.keys().copied().collect();
        self.refresh_routing()?;
        for job in jobs {
            if let Some(a) = self.state(job)?.request_pause(now) {
                self.run_actions(job, vec![a])?;
            }
        }
        Ok(())
    }

    fn run_actions(&mut self, job: JobId, actions: Vec<JobAction>) -> Result<()> {
        let mut work: VecDeque<JobAction> = actions.into();
        while let Some(a) = work.pop_front() {
            let now = self.now();
            match a {
                JobAction::ScheduleCompute => {
                    let c = self.specs[&job].compute_seconds;
                    self.schedule(now + c, Event::Compute(job))?;
                }
                JobAction::SendPp(i) => {
                    let demands = pp_step_flows(&self.specs[&job], self.layout(job)?, &self.topo, i);
                    for d in &demands {
                        let choice = self.router.mice_choice(self.topo.rack_of_gpu(d.src));
                        let path = self.topo.path_between(d.src, d.dst, choice)?;
                        let owner = FlowOwner { job, kind: FlowKind::Pp, tag: i as u64 };
                        let id = self.net.add_flow(&path, d.bytes, owner)?;
                        self.flows.insert(id, FlowTag::Job { job, key: None, src: d.src, dst: d.dst });
                    }
                    let n = demands.len();
                    self.note("pp", format_args!("job={job} step={i} flows={n}"))?;
                    work.extend(self.state(job)?.step_sent(n));
                }
                JobAction::SendDp => {
                    if !self.dp_cache.contains_key(&job) {
                        let f = dp_step_flows(&self.specs[&job], self.layout(job)?, &self.topo)?;
                        self.dp_cache.insert(job, f);
                    }
                    let demands = self.dp_cache[&job].clone();
                    for (key, d) in &demands {
                        let path = self.topo.path_between(d.src, d.dst, self.router.dp_choice(key))?;
                        let owner = FlowOwner { job, kind: FlowKind::Dp, tag: 0 };
                        let id = self.net.add_flow(&path, d.bytes, owner)?;
                        self.flows.insert(id, FlowTag::Job { job, key: Some(*key), src: d.src, dst: d.dst });
                    }
                    let n = demands.len();
                    self.note("dp", format_args!("job={job} flows={n}"))?;
                    if n > 0 {
                        self.ensure_sglb()?;
                    }
                    work.extend(self.state(job)?.step_sent(n));
                }
                JobAction::ReachedBarrier => {
                    let st = self.state(job)?;
                    if st.barrier_at.is_none() {
                        st.mark_barrier(now);
                    }
                    let iter = st.iteration;
                    self.note("barrier", format_args!("job={job} iteration={iter}"))?;
                    let ready: Vec<usize> = self
                        .defrag
                        .as_ref()
                        .map(|d| {
                            (0..d.tasks.len())
                                .filter(|&i| {
                                    let t = &d.tasks[i];
                                    t.job == job && t.phase == MovePhase::AwaitBarrier && t.after.is_none()
                                })
                                .collect()
                        })
                        .unwrap_or_default();
                    for i in ready {
                        self.begin_transfer(i)?;
                    }
                }
                JobAction::Finished => self.finish_job(job)?,
            }
        }
        Ok(())
    }

    fn on_flow_done(&mut self, id: FlowId) -> Result<()> {
        let tag = self
            .flows
            .remove(&id)
            .ok_or_else(|| Error::Invariant(format!("unknown flow {}", id.0)))?;
        match tag {
            FlowTag::Job { job, .. } => {
                self.note("flow", format_args!("id={} job={job}", id.0))?;
                let acts = self.state(job)?.flow_done()?;
                self.run_actions(job, acts)
            }
            FlowTag::Move(i) => {
                self.note("flow", format_args!("id={} move={i}", id.0))?;
                let d = self.defrag.as_mut().ok_or_else(|| Error::Invariant("move flow without defrag".into()))?;
                let t = &mut d.tasks[i];
                t.flows_pending -= 1;
                if t.flows_pending == 0 {
                    self.transfer_complete(i)?;
                }
                Ok(())
            }
        }
    }

    fn task(&mut self, i: usize) -> &mut MigrationTask {
        &mut self.defrag.as_mut().expect("migration in flight").tasks[i]
    }

    fn begin_transfer(&mut self, i: usize) -> Result<()> {
        let now = self.now();
        let t = self.task(i);
        t.advance(MovePhase::Transfer)?;
        t.start = Some(now);
        let (job, src, dst, bytes) = (t.job, t.src, t.dst, t.shard_bytes);
        let rack = self.topo.rack_of_host(src);
        let gph = self.topo.gpus_per_host;
        for slot in 0..gph {
            let (a, b) = (self.topo.gpu(src, slot), self.topo.gpu(dst, slot));
            let path = self.topo.path_between(a, b, self.router.mice_choice(rack))?;
            let owner = FlowOwner { job, kind: FlowKind::Migration, tag: i as u64 };
            let id = self.net.add_flow(&path, bytes, owner)?;
            self.flows.insert(id, FlowTag::Move(i));
        }
        self.task(i).flows_pending = gph;
        self.note("transfer", format_args!("job={job} src={} dst={}", src.0, dst.0))
    }

    fn swap_in_layout(&mut self, job: JobId, stage: usize, from: HostId, to: HostId) -> Result<()> {
        let mut l = self.layout(job)?.clone();
        let slot = l.stage_hosts[stage]
            .iter_mut()
            .find(|h| **h == from)
            .ok_or_else(|| Error::Invariant(format!("job {job} stage {stage} does not hold host {}", from.0)))?;
        *slot = to;
        self.placement.set_layout(job, l)
    }

    fn transfer_complete(&mut self, i: usize) -> Result<()> {
        let t = self.task(i).clone();
        self.note("transferred", format_args!("job={} src={} dst={}", t.job, t.src.0, t.dst.0))?;
        if t.release_early {
            self.swap_in_layout(t.job, t.stage, t.src, t.dst)?;
            self.placement.vacate(t.src, t.job)?;
            self.host_freed(t.src)?;
        }
        if self.placement.host_state(t.dst) == HostState::Reserved(t.job) {
            self.arrive(i)
        } else {
            self.task(i).advance(MovePhase::AwaitDstFree)
        }
    }

    fn arrive(&mut self, i: usize) -> Result<()> {
        let now = self.now();
        let t = self.task(i);
        t.advance(MovePhase::Reinit)?;
        t.end = Some(now);
        let t = t.clone();
        self.placement.occupy(t.dst, t.job)?;
        if !t.release_early {
            self.swap_in_layout(t.job, t.stage, t.src, t.dst)?;
            self.placement.vacate(t.src, t.job)?;
        }
        self.note("moved", format_args!("job={} src={} dst={}", t.job, t.src.0, t.dst.0))?;
        if !t.release_early {
            self.host_freed(t.src)?;
        }
        let d = self.defrag.as_mut().expect("migration in flight");
        let next: Vec<usize> = (0..d.tasks.len()).filter(|&j| d.tasks[j].after == Some(i)).collect();
        let all_in = d
            .tasks
            .iter()
            .filter(|x| x.job == t.job)
            .all(|x| x.phase == MovePhase::Reinit);
        // host_freed above may already have completed this job through a nested arrival
        let mj = d.jobs.get_mut(&t.job).ok_or(Error::UnknownJob(t.job.0))?;
        let all_in = all_in && !mj.resume_scheduled;
        mj.resume_scheduled |= all_in;
        for j in next {
            self.begin_transfer(j)?;
        }
        if all_in {
            let at = now + self.reinit;
            self.schedule(at, Event::Resume(t.job))?;
        }
        Ok(())
    }

    /// A host became free: give it to a migration waiting for it.
    fn host_freed(&mut self, h: HostId) -> Result<()> {
        let Some(d) = self.defrag.as_mut() else {
            return Ok(());
        };
        let Some(i) = d.claims.remove(&h) else {
            return Ok(());
        };
        let (job, phase) = (d.tasks[i].job, d.tasks[i].phase);
        self.placement.reserve(h, job)?;
        if phase == MovePhase::AwaitDstFree {
            self.arrive(i)?;
        }
        Ok(())
    }

    fn resume(&mut self, job: JobId) -> Result<()> {
        let now = self.now();
        let d = self.defrag.as_mut().ok_or_else(|| Error::Invariant("resume without defrag".into()))?;
        for t in d.tasks.iter_mut().filter(|t| t.job == job) {
            t.advance(MovePhase::Done)?;
        }
        let mj = d.jobs.remove(&job).ok_or(Error::UnknownJob(job.0))?;
        let event = d.id;
        let mut l = self.layout(job)?.clone();
        for s in &mut l.stage_hosts {
            s.sort();
        }
        self.placement.set_layout(job, l)?;
        self.targets.remove(&job);
        self.dp_cache.remove(&job);
        let st = self.state(job)?;
        let barrier = st.barrier_at.unwrap_or(now);
        self.out.migrations.push(MigrationRecord {
            event,
            job_id: job.0,
            hosts_moved: mj.hosts,
            planned: mj.planned,
            barrier,
            resumed: now,
            duration_seconds: now - mj.planned,
            downtime_seconds: now - barrier,
        });
        let acts = self.state(job)?.resume(now)?;
        self.note("resume", format_args!("job={job}"))?;
        self.frag_sample();
        self.refresh_routing()?;
        self.maybe_quiesce()?;
        self.run_actions(job, acts)
    }

    fn maybe_quiesce(&mut self) -> Result<()> {
        if !self.defrag.as_ref().is_some_and(Defrag::all_done) {
            return Ok(());
        }
        let d = self.defrag.take().expect("checked");
        self.out.defrag[d.record].completed = Some(self.now());
        self.note("quiescent", format_args!("id={}", d.id))?;
        let dec = self.controller.on_quiescence(&self.placement, &self.specs)?;
        let trigger = self.deferred_trigger.take().unwrap_or(JobId(u64::MAX));
        self.decide(dec, trigger)?;
        self.refresh_routing()
    }

    fn finish_job(&mut self, job: JobId) -> Result<()> {
        let now = self.now();
        let st = self.state(job)?;
        st.finish(now);
        let rec = job_record(st, now);
        self.out.jobs.push(rec);
        self.finished += 1;
        self.note("finish", format_args!("job={job}"))?;
        if let Some(d) = self.defrag.as_mut() {
            let cancelled: BTreeSet<usize> = (0..d.tasks.len())
                .filter(|&i| d.tasks[i].job == job && d.tasks[i].phase != MovePhase::Done)
                .collect();
            for &i in &cancelled {
                d.tasks[i].phase = MovePhase::Done;
            }
            d.claims.retain(|_, i| !cancelled.contains(i));
            d.jobs.remove(&job);
        }
        let freed = self.placement.release_job(job)?;
        self.specs.remove(&job);
        self.states.remove(&job);
        self.targets.remove(&job);
        self.dp_cache.remove(&job);
        for h in freed {
            self.host_freed(h)?;
        }
        self.frag_sample();
        // one at a time: each admission may start a defrag that changes what fits next
        while let Some((spec, hosts)) = self.placement.admit_next() {
            self.admit(spec, hosts)?;
        }
        self.refresh_routing()?;
        self.maybe_quiesce()
    }

    fn refresh_routing(&mut self) -> Result<()> {
        let mut demands = Vec::new();
        for (id, spec) in &self.specs {
            let layout = match self.targets.get(id) {
                Some(l) => l,
                None => self.placement.layout(*id).ok_or(Error::UnknownJob(id.0))?,
            };
            demands.extend(dp_demands(spec, layout, &self.topo)?);
        }
        self.router.recompute(&demands);
        self.demands = demands;
        self.repath(None)
    }

    /// Re-applies the routing table to in-flight DP flows.
    fn repath(&mut self, only: Option<&BTreeSet<DemandKey>>) -> Result<()> {
        for (&id, tag) in &self.flows {
            if let FlowTag::Job { key: Some(k), src, dst, .. } = *tag {
                // flows completed in the same instant are still awaiting their handler
                if only.is_none_or(|s| s.contains(&k)) && self.net.flow(id).is_some() {
                    let path = self.topo.path_between(src, dst, self.router.dp_choice(&k))?;
                    self.net.set_path(id, &path)?;
                }
            }
        }
        Ok(())
    }

    fn ensure_sglb(&mut self) -> Result<()> {
        if self.router.strategy() == RoutingStrategy::Sglb && !self.sglb_pending {
            self.sglb_pending = true;
            let at = self.now() + self.router.sglb_config().epoch;
            self.schedule(at, Event::SglbEpoch)?;
        }
        Ok(())
    }

    fn active_dp_keys(&self) -> BTreeSet<DemandKey> {
        self.flows
            .values()
            .filter_map(|t| match t {
                FlowTag::Job { key: Some(k), .. } => Some(*k),
                _ => None,
            })
            .collect()
    }

    fn sglb_epoch(&mut self) -> Result<()> {
        self.sglb_pending = false;
        let keys = self.active_dp_keys();
        let active: Vec<DpDemand> = self.demands.iter().filter(|d| keys.contains(&d.key)).cloned().collect();
        let moved = self.router.sglb_step(&active);
        self.note("sglb", format_args!("active={} moved={}", active.len(), moved.len()))?;
        if !moved.is_empty() {
            let set: BTreeSet<DemandKey> = moved.into_iter().collect();
            self.repath(Some(&set))?;
            self.ensure_sglb()?;
        }
        Ok(())
    }

    fn sample(&mut self) -> Result<()> {
        let loads = self.net.link_loads();
        let links = self.net.links();
        let cap = links.capacity();
        let utils: Vec<f64> = (0..links.len())
            .filter(|&l| links.as_uplink(l).is_some())
            .map(|l| loads[l] / cap[l])
            .collect();
        let dp_flows = self.active_dp_keys().len();
        self.out.utilization.push(UtilSample {
            time: self.now(),
            mean_uplink_util: crate::metrics::mean(&utils).unwrap_or(0.0),
            max_uplink_util: utils.iter().copied().fold(0.0, f64::max),
            dp_flows,
        });
        if self.finished < self.trace.len() {
            let at = self.now() + self.opts.util_sample_interval.expect("sampling enabled");
            self.schedule(at, Event::Sample)?;
        }
        Ok(())
    }

    fn frag_sample(&mut self) {
        let r = fragmentation_degree(&self.placement, &self.specs);
        let violating = threshold_violated(&r, Some(self.controller.threshold())).len();
        self.out.fragmentation.push(FragSample {
            time: self.now(),
            max_degree: r.max_degree,
            fragmented_groups: r.fragmented_groups,
            violating_racks: violating,
            active_jobs: self.placement.active_jobs(),
            busy_hosts: self.topo.total_hosts() - self.placement.total_free(),
        });
    }

    fn check_conservation(&mut self) {
        self.out.stats.processed += 1;
        if self.opts.check_conservation {
            self.out.stats.conservation_checks += 1;
            if !self.net.conservation_check() {
                self.out.stats.conservation_failures += 1;
            }
        }
    }

    /// Quiescent-point checks, once per instant.
    fn after_event(&mut self) -> Result<()> {
        let quiet = self.defrag.is_none() && !self.controller.has_deferred();
        if quiet && self.opts.check_placement {
            self.placement.check()?;
        }
        let cfg = self.controller.config();
        let isolated = cfg.migration
            && cfg.routing == RoutingStrategy::Perfect
            && self.controller.threshold() <= self.topo.uplinks_per_tor;
        if quiet && isolated {
            self.out.stats.isolation_checks += 1;
            if !self.path_isolated() {
                self.out.stats.isolation_violations += 1;
            }
        }
        Ok(())
    }

    /// No ToR uplink (either direction) is assigned, or carries, two DP flows.
    fn path_isolated(&self) -> bool {
        if shared_uplinks(self.router.table(), &self.demands) > 0 {
            return false;
        }
        let links = self.net.links();
        let mut seen = BTreeSet::new();
        for (&id, tag) in &self.flows {
            if let FlowTag::Job { key: Some(_), .. } = tag {
                let f = self.net.flow(id).expect("tracked flow");
                for &l in &f.links {
                    if links.as_uplink(l).is_some() && !seen.insert(l) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

fn solver_row(
    time: f64,
    stages: usize,
    threshold: usize,
    moves: Option<usize>,
    stats: Option<&SolverStats>,
    status: &str,
) -> SolverRecord {
    SolverRecord {
        time,
        stages,
        threshold,
        move_count: moves,
        nodes: stats.map_or(0, |s| s.nodes_explored),
        optimal: stats.is_some_and(|s| s.optimal),
        solve_seconds: stats.map_or(0.0, |s| s.solve_time),
        status: status.to_string(),
    }
}

fn job_record(st: &JobState, now: f64) -> JobRecord {
    let s = &st.spec;
    JobRecord {
        job_id: s.job_id.0,
        template: s.template.clone(),
        gpus: s.num_workers,
        dp: s.dp_degree,
        tp: s.tp_degree,
        pp: s.pp_degree,
        iterations: s.iterations,
        arrival: s.arrival_time,
        admitted: st.admitted_at,
        finished: now,
        ideal_seconds: st.ideal_duration,
        actual_seconds: now - st.admitted_at,
        slowdown: st.slowdown().unwrap_or(f64::NAN),
        defrag_events: st.defrag_events,
        hosts_moved: st.hosts_moved,
        downtime_seconds: st.downtime,
    }
}
