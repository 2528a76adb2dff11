//! Per-rack fragmentation degree: the number of DP flows leaving a rack.
//!
//! Every pipeline stage is treated as an independent job whose `tp` rings
//! all span the stage's hosts. A stage spread over two or more racks adds
//! its ring count to every rack it touches.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::scheduler::Placement;
use crate::topology::{ClusterTopology, HostId};
use crate::workload::{JobId, JobLayout, JobSpec};

/// One pipeline stage at rack granularity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entity {
    pub job: JobId,
    pub stage: usize,
    /// Rings per rack when fragmented (the TP degree).
    pub weight: usize,
    /// Hosts per rack.
    pub counts: Vec<usize>,
}

impl Entity {
    pub fn size(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn is_fragmented(&self) -> bool {
        is_fragmented(&self.counts)
    }
}

pub fn is_fragmented(counts: &[usize]) -> bool {
    counts.iter().filter(|&&c| c > 0).count() >= 2
}

pub fn entities(job: &JobSpec, layout: &JobLayout, topo: &ClusterTopology) -> Vec<Entity> {
    layout
        .stage_hosts
        .iter()
        .enumerate()
        .map(|(stage, hosts)| {
            let mut counts = vec![0; topo.num_racks];
            for h in hosts {
                counts[topo.rack_of_host(*h)] += 1;
            }
            Entity {
                job: job.job_id,
                stage,
                weight: job.tp_degree,
                counts,
            }
        })
        .collect()
}

/// All stages of all placed jobs, ordered by (job, stage).
pub fn placement_entities(placement: &Placement, jobs: &BTreeMap<JobId, JobSpec>) -> Vec<Entity> {
    let topo = placement.topology();
    placement
        .layouts()
        .filter_map(|(id, l)| jobs.get(&id).map(|j| entities(j, l, topo)))
        .flatten()
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FragmentationReport {
    pub per_rack: Vec<usize>,
    /// Fragmented replica groups cluster-wide.
    pub fragmented_groups: usize,
    pub max_degree: usize,
}

pub fn degrees(entities: &[Entity], racks: usize) -> Vec<usize> {
    let mut d = vec![0; racks];
    for e in entities.iter().filter(|e| e.is_fragmented()) {
        for (t, &c) in e.counts.iter().enumerate() {
            if c > 0 {
                d[t] += e.weight;
            }
        }
    }
    d
}

pub fn report(entities: &[Entity], racks: usize) -> FragmentationReport {
    let per_rack = degrees(entities, racks);
    FragmentationReport {
        max_degree: per_rack.iter().copied().max().unwrap_or(0),
        fragmented_groups: entities.iter().filter(|e| e.is_fragmented()).map(|e| e.weight).sum(),
        per_rack,
    }
}

pub fn fragmentation_degree(placement: &Placement, jobs: &BTreeMap<JobId, JobSpec>) -> FragmentationReport {
    report(&placement_entities(placement, jobs), placement.topology().num_racks)
}

/// Racks whose degree exceeds the threshold; `None` means unbounded.
pub fn threshold_violated(report: &FragmentationReport, threshold: Option<usize>) -> Vec<usize> {
    let Some(limit) = threshold else {
        return Vec::new();
    };
    (0..report.per_rack.len()).filter(|&t| report.per_rack[t] > limit).collect()
}

/// Incrementally maintained degrees, keyed by (job, stage).
#[derive(Debug, Clone, Default)]
pub struct DegreeTracker {
    per_rack: Vec<usize>,
    live: BTreeMap<(JobId, usize), Entity>,
}

impl DegreeTracker {
    pub fn new(racks: usize) -> Self {
        DegreeTracker {
            per_rack: vec![0; racks],
            live: BTreeMap::new(),
        }
    }

    fn apply(&mut self, e: &Entity, add: bool) {
        if !e.is_fragmented() {
            return;
        }
        for (t, &c) in e.counts.iter().enumerate() {
            if c > 0 {
                if add {
                    self.per_rack[t] += e.weight;
                } else {
                    self.per_rack[t] -= e.weight;
                }
            }
        }
    }

    /// Inserts or replaces a stage.
    pub fn upsert(&mut self, e: Entity) {
        if let Some(old) = self.live.remove(&(e.job, e.stage)) {
            self.apply(&old, false);
        }
        self.apply(&e, true);
        self.live.insert((e.job, e.stage), e);
    }

    pub fn remove_job(&mut self, job: JobId) {
        let keys: Vec<_> = self.live.range((job, 0)..=(job, usize::MAX)).map(|(k, _)| *k).collect();
        for k in keys {
            if let Some(e) = self.live.remove(&k) {
                self.apply(&e, false);
            }
        }
    }

    pub fn per_rack(&self) -> &[usize] {
        &self.per_rack
    }

    pub fn report(&self) -> FragmentationReport {
        FragmentationReport {
            per_rack: self.per_rack.clone(),
            max_degree: self.per_rack.iter().copied().max().unwrap_or(0),
            fragmented_groups: self.live.values().filter(|e| e.is_fragmented()).map(|e| e.weight).sum(),
        }
    }
}

/// Rack-level left-to-right fill: job `i` gets the next `sizes[i]` slots.
pub fn sequential_counts(sizes: &[usize], racks: usize, capacity: usize) -> Result<Vec<Vec<usize>>> {
    let total: usize = sizes.iter().sum();
    if total > racks * capacity {
        return Err(Error::Placement(format!("{total} units exceed capacity {}", racks * capacity)));
    }
    let mut rack = 0;
    let mut room = capacity;
    let mut out = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let mut row = vec![0; racks];
        let mut left = n;
        while left > 0 {
            if room == 0 {
                rack += 1;
                room = capacity;
            }
            let k = left.min(room);
            row[rack] += k;
            left -= k;
            room -= k;
        }
        out.push(row);
    }
    Ok(out)
}

/// Places the jobs on consecutive hosts in host-index order.
pub fn sequential_placement(jobs: &[JobSpec], topo: &ClusterTopology) -> Result<Placement> {
    let total: usize = jobs.iter().map(|j| j.hosts(topo)).sum();
    if total > topo.total_hosts() {
        return Err(Error::Placement(format!("{total} hosts requested, {} available", topo.total_hosts())));
    }
    let mut p = Placement::new(topo);
    let mut next = 0;
    for j in jobs {
        j.validate(topo)?;
        let n = j.hosts(topo);
        let hosts = (next..next + n).map(HostId).collect();
        next += n;
        p.insert_layout(j.job_id, JobLayout::from_hosts(j, topo, hosts))?;
    }
    Ok(p)
}
