//! Defragmentation control loop: watch placements, plan migrations when a
//! rack exceeds the fragmentation threshold, and pick the routing scheme.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fragmentation::{placement_entities, report, threshold_violated};
use crate::jobmodel::DEFAULT_REINIT_SECONDS;
use crate::routing::{RoutingStrategy, SglbConfig};
use crate::scheduler::{HostState, Placement};
use crate::solver::{solve, SolverInstance, SolverJob, SolverOptions, SolverStats};
use crate::topology::{ClusterTopology, HostId};
use crate::workload::{JobId, JobSpec};

/// Named combinations of routing scheme and migration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    /// Perfect routing with defragmentation.
    Monkeytree,
    PerfectOnly,
    Ecmp,
    Crux,
    Sglb,
    Spray,
    MonkeytreeEcmp,
    MonkeytreeCrux,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Monkeytree,
        Algorithm::PerfectOnly,
        Algorithm::Ecmp,
        Algorithm::Crux,
        Algorithm::Sglb,
        Algorithm::Spray,
        Algorithm::MonkeytreeEcmp,
        Algorithm::MonkeytreeCrux,
    ];

    pub fn routing(self) -> RoutingStrategy {
        match self {
            Algorithm::Monkeytree | Algorithm::PerfectOnly => RoutingStrategy::Perfect,
            Algorithm::Ecmp | Algorithm::MonkeytreeEcmp => RoutingStrategy::Ecmp,
            Algorithm::Crux | Algorithm::MonkeytreeCrux => RoutingStrategy::Crux,
            Algorithm::Sglb => RoutingStrategy::Sglb,
            Algorithm::Spray => RoutingStrategy::Spray,
        }
    }

    pub fn migrates(self) -> bool {
        matches!(
            self,
            Algorithm::Monkeytree | Algorithm::MonkeytreeEcmp | Algorithm::MonkeytreeCrux
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Monkeytree => "monkeytree",
            Algorithm::PerfectOnly => "perfect-only",
            Algorithm::Ecmp => "ecmp",
            Algorithm::Crux => "crux",
            Algorithm::Sglb => "sglb",
            Algorithm::Spray => "spray",
            Algorithm::MonkeytreeEcmp => "monkeytree-ecmp",
            Algorithm::MonkeytreeCrux => "monkeytree-crux",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Fragmentation threshold; `None` means the ToR uplink count.
    pub threshold: Option<usize>,
    pub routing: RoutingStrategy,
    pub migration: bool,
    pub solver: SolverOptions,
    /// Delay migrations by the solver's measured wall time.
    pub charge_solver_latency: bool,
    pub reinit_seconds: f64,
    pub sglb: SglbConfig,
}

impl ControllerConfig {
    pub fn for_algorithm(alg: Algorithm) -> Self {
        ControllerConfig {
            threshold: None,
            routing: alg.routing(),
            migration: alg.migrates(),
            solver: SolverOptions::default(),
            charge_solver_latency: false,
            reinit_seconds: DEFAULT_REINIT_SECONDS,
            sglb: SglbConfig::default(),
        }
    }

    pub fn threshold_for(&self, topo: &ClusterTopology) -> usize {
        self.threshold.unwrap_or(topo.uplinks_per_tor)
    }

    /// With migration on, the threshold must leave room for two fragmented
    /// stages of the widest TP degree per rack.
    pub fn validate(&self, topo: &ClusterTopology, max_tp: usize) -> Result<()> {
        let lambda = self.threshold_for(topo);
        if self.migration && lambda < 2 * max_tp {
            return Err(Error::Config(format!(
                "threshold {lambda} is below twice the largest TP degree {max_tp}"
            )));
        }
        if !(self.reinit_seconds >= 0.0) {
            return Err(Error::Config("reinit_seconds must be non-negative".into()));
        }
        Ok(())
    }
}

/// One host's workers moving, at host granularity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct HostMove {
    pub job: JobId,
    pub stage: usize,
    pub src: HostId,
    pub dst: HostId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DefragPlan {
    pub moves: Vec<HostMove>,
    pub move_count: usize,
    pub violating_racks: Vec<usize>,
    pub stats: SolverStats,
    pub stages: usize,
}

impl DefragPlan {
    pub fn jobs(&self) -> BTreeSet<JobId> {
        self.moves.iter().map(|m| m.job).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    Compliant,
    /// Migrations are in flight; the check runs again once they finish.
    Deferred,
    Plan(DefragPlan),
    /// The solver found no compliant placement; routing continues best effort.
    Unsolvable { reason: String, stats: Option<SolverStats>, stages: usize },
}

/// Rack-level minimum-move plan resolved to concrete hosts. Leaving hosts
/// are a stage's highest-index hosts on the source rack; arrivals take the
/// destination rack's free hosts in index order, then hosts being vacated.
pub fn plan_defrag(
    placement: &Placement,
    jobs: &BTreeMap<JobId, JobSpec>,
    threshold: usize,
    opts: &SolverOptions,
) -> Result<Decision> {
    let topo = placement.topology();
    let ents = placement_entities(placement, jobs);
    let violating = threshold_violated(&report(&ents, topo.num_racks), Some(threshold));
    if violating.is_empty() {
        return Ok(Decision::Compliant);
    }
    let inst = SolverInstance {
        racks: topo.num_racks,
        capacity: topo.hosts_per_rack,
        threshold,
        jobs: ents
            .iter()
            .enumerate()
            .map(|(i, e)| SolverJob {
                id: i as u64,
                size: e.size(),
                weight: e.weight,
                initial: e.counts.clone(),
            })
            .collect(),
    };
    let plan = match solve(&inst, opts) {
        Ok(p) => p,
        Err(Error::Infeasible(reason)) => {
            return Ok(Decision::Unsolvable {
                reason,
                stats: None,
                stages: ents.len(),
            })
        }
        Err(e) => return Err(e),
    };
    let mut leaving: Vec<Vec<HostId>> = vec![Vec::new(); topo.num_racks];
    let mut outgoing: Vec<(usize, HostId, usize)> = Vec::new(); // (entity, src, to)
    let mut taken: BTreeSet<HostId> = BTreeSet::new();
    for m in &plan.moves {
        let e = &ents[m.job as usize];
        let layout = placement.layout(e.job).ok_or(Error::UnknownJob(e.job.0))?;
        let mut candidates: Vec<HostId> = layout.stage_hosts[e.stage]
            .iter()
            .copied()
            .filter(|&h| topo.rack_of_host(h) == m.from && !taken.contains(&h))
            .collect();
        candidates.sort_by(|a, b| b.cmp(a));
        if candidates.len() < m.count {
            return Err(Error::Invariant(format!("stage ({}, {}) lacks hosts on rack {}", e.job, e.stage, m.from)));
        }
        for &h in &candidates[..m.count] {
            taken.insert(h);
            leaving[m.from].push(h);
            outgoing.push((m.job as usize, h, m.to));
        }
    }
    let mut slots: Vec<std::vec::IntoIter<HostId>> = (0..topo.num_racks)
        .map(|r| {
            let mut s: Vec<HostId> = topo
                .hosts_in_rack(r)
                .filter(|&h| placement.host_state(h) == HostState::Free)
                .collect();
            let mut vacated = leaving[r].clone();
            vacated.sort();
            s.extend(vacated);
            s.into_iter()
        })
        .collect();
    let mut moves = Vec::with_capacity(outgoing.len());
    for (e, src, to) in outgoing {
        let dst = slots[to]
            .next()
            .ok_or_else(|| Error::Invariant(format!("rack {to} has no slot for an incoming host")))?;
        moves.push(HostMove {
            job: ents[e].job,
            stage: ents[e].stage,
            src,
            dst,
        });
    }
    Ok(Decision::Plan(DefragPlan {
        move_count: plan.move_count,
        moves,
        violating_racks: violating,
        stats: plan.stats,
        stages: ents.len(),
    }))
}

/// Migration trigger logic. Violations only arise from arrivals; a check
/// that lands while migrations are in flight is retried at quiescence.
#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
    threshold: usize,
    deferred: bool,
}

impl Controller {
    pub fn new(cfg: ControllerConfig, topo: &ClusterTopology) -> Self {
        Controller {
            threshold: cfg.threshold_for(topo),
            cfg,
            deferred: false,
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn has_deferred(&self) -> bool {
        self.deferred
    }

    pub fn on_job_arrival(
        &mut self,
        placement: &Placement,
        jobs: &BTreeMap<JobId, JobSpec>,
        migrating: bool,
    ) -> Result<Decision> {
        if !self.cfg.migration {
            return Ok(Decision::Compliant);
        }
        if migrating {
            self.deferred = true;
            return Ok(Decision::Deferred);
        }
        plan_defrag(placement, jobs, self.threshold, &self.cfg.solver)
    }

    /// Runs a deferred check once no migration is in flight.
    pub fn on_quiescence(&mut self, placement: &Placement, jobs: &BTreeMap<JobId, JobSpec>) -> Result<Decision> {
        if !std::mem::take(&mut self.deferred) {
            return Ok(Decision::Compliant);
        }
        plan_defrag(placement, jobs, self.threshold, &self.cfg.solver)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fragmentation::fragmentation_degree;
    use crate::workload::{JobLayout, ModelTemplate};

    fn topo() -> ClusterTopology {
        ClusterTopology::make_two_tier(3, 4, 1, 2, 1.0, 1.0, 2).unwrap()
    }

    fn job(id: u64, hosts: usize) -> JobSpec {
        let t = ModelTemplate::default_menu().remove(0);
        JobSpec::from_template(JobId(id), &t, hosts, 1, 1, false, 10, 0.0)
    }

    fn put(p: &mut Placement, jobs: &mut BTreeMap<JobId, JobSpec>, id: u64, hosts: &[usize]) {
        let j = job(id, hosts.len());
        let l = JobLayout::from_hosts(&j, p.topology(), hosts.iter().map(|&h| HostId(h)).collect());
        p.insert_layout(j.job_id, l).unwrap();
        jobs.insert(j.job_id, j);
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("best".parse::<Algorithm>().is_err());
    }

    #[test]
    fn compliant_placement_needs_nothing() {
        let t = topo();
        let mut p = Placement::new(&t);
        let mut jobs = BTreeMap::new();
        put(&mut p, &mut jobs, 0, &[0, 1, 4]);
        let d = plan_defrag(&p, &jobs, 1, &SolverOptions::default()).unwrap();
        assert_eq!(d, Decision::Compliant);
    }

    #[test]
    fn plan_reaches_compliance_on_hosts() {
        let t = topo();
        let mut p = Placement::new(&t);
        let mut jobs = BTreeMap::new();
        // two split jobs share rack 1; threshold 1 forces one of them home
        put(&mut p, &mut jobs, 0, &[0, 1, 4]);
        put(&mut p, &mut jobs, 1, &[5, 8]);
        let Decision::Plan(plan) = plan_defrag(&p, &jobs, 1, &SolverOptions::default()).unwrap() else {
            panic!("expected a plan");
        };
        assert_eq!(plan.move_count, 1);
        assert_eq!(plan.violating_racks, vec![1]);
        // apply the moves and re-measure
        let mut after = Placement::new(&t);
        for (id, l) in p.layouts() {
            let mut l = l.clone();
            for m in plan.moves.iter().filter(|m| m.job == id) {
                for h in l.stage_hosts[m.stage].iter_mut().filter(|h| **h == m.src) {
                    *h = m.dst;
                }
            }
            after.insert_layout(id, l).unwrap();
        }
        assert!(fragmentation_degree(&after, &jobs).max_degree <= 1);
        // destinations were free hosts
        for m in &plan.moves {
            assert_eq!(p.host_state(m.dst), HostState::Free);
        }
    }

    #[test]
    fn deferred_until_quiescence() {
        let t = topo();
        let mut p = Placement::new(&t);
        let mut jobs = BTreeMap::new();
        put(&mut p, &mut jobs, 0, &[0, 1, 4]);
        put(&mut p, &mut jobs, 1, &[5, 8]);
        let mut cfg = ControllerConfig::for_algorithm(Algorithm::Monkeytree);
        cfg.threshold = Some(1);
        let mut c = Controller::new(cfg, &t);
        assert_eq!(c.on_job_arrival(&p, &jobs, true).unwrap(), Decision::Deferred);
        assert!(matches!(c.on_quiescence(&p, &jobs).unwrap(), Decision::Plan(_)));
        assert_eq!(c.on_quiescence(&p, &jobs).unwrap(), Decision::Compliant);
    }

    #[test]
    fn baseline_never_plans() {
        let t = topo();
        let mut p = Placement::new(&t);
        let mut jobs = BTreeMap::new();
        put(&mut p, &mut jobs, 0, &[0, 1, 4]);
        put(&mut p, &mut jobs, 1, &[5, 8]);
        let mut cfg = ControllerConfig::for_algorithm(Algorithm::PerfectOnly);
        cfg.threshold = Some(1);
        let mut c = Controller::new(cfg, &t);
        assert_eq!(c.on_job_arrival(&p, &jobs, false).unwrap(), Decision::Compliant);
    }

    #[test]
    fn threshold_feasibility_checked() {
        let t = ClusterTopology::make_two_tier(4, 4, 4, 4, 1.0, 1.0, 4).unwrap();
        let cfg = ControllerConfig::for_algorithm(Algorithm::Monkeytree);
        assert!(cfg.validate(&t, 2).is_ok());
        assert!(cfg.validate(&t, 4).is_err());
        assert!(ControllerConfig::for_algorithm(Algorithm::Ecmp).validate(&t, 4).is_ok());
    }

    #[test]
    fn vacated_hosts_are_reused() {
        // full cluster: arrivals can only land on hosts being vacated
        let t = ClusterTopology::make_two_tier(2, 2, 1, 2, 1.0, 1.0, 2).unwrap();
        let mut p = Placement::new(&t);
        let mut jobs = BTreeMap::new();
        put(&mut p, &mut jobs, 0, &[0, 2]);
        put(&mut p, &mut jobs, 1, &[1, 3]);
        let Decision::Plan(plan) = plan_defrag(&p, &jobs, 0, &SolverOptions::default()).unwrap() else {
            panic!("expected a plan");
        };
        // a swap: each job takes the host the other leaves
        assert_eq!(plan.move_count, 2);
        for m in &plan.moves {
            assert!(matches!(p.host_state(m.dst), HostState::Busy(j) if j != m.job));
        }
    }
}
