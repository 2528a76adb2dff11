//! Uplink selection for cross-rack flows.
//!
//! A DP flow is pinned to one uplink index, used at both its source and
//! destination ToR (uplink `i` of every ToR reaches the same spine), so an
//! index is a color in the rack-level demand graph. Small flows (pipeline
//! activations, checkpoints) are spread round-robin per source ToR.

pub mod coloring;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{ClusterTopology, GpuId, UplinkChoice};
use crate::workload::JobId;

pub use coloring::{edge_coloring, hopcroft_karp, perfect_route, DemandGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RoutingStrategy {
    /// Edge coloring of the rack-level DP demand graph.
    Perfect,
    Ecmp,
    /// Jobs in decreasing GPU utilization, each flow on the least-loaded uplink.
    Crux,
    /// Periodic switch-local rebalancing away from overloaded uplinks.
    Sglb,
    /// Fluid split over all uplinks of a full-bisection fabric.
    Spray,
}

/// Stable identity of one ring hop across iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DemandKey {
    pub job: JobId,
    pub stage: usize,
    pub group: usize,
    pub hop: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpDemand {
    pub key: DemandKey,
    pub src: GpuId,
    pub dst: GpuId,
    pub src_rack: usize,
    pub dst_rack: usize,
    /// Compute share of the owning job's isolated iteration.
    pub utilization: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SglbConfig {
    /// Seconds between rebalancing rounds.
    pub epoch: f64,
    /// An uplink is overloaded above this multiple of its ToR's mean load.
    pub hysteresis: f64,
}

impl Default for SglbConfig {
    fn default() -> Self {
        SglbConfig {
            epoch: 0.1,
            hysteresis: 1.2,
        }
    }
}

/// FNV-1a over the flow's synthetic 5-tuple.
pub fn ecmp_hash(key: &DemandKey, src: GpuId, dst: GpuId) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for word in [key.job.0, key.stage as u64, key.group as u64, key.hop as u64, src.0 as u64, dst.0 as u64] {
        for b in word.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

pub fn ecmp_route(d: &DpDemand, uplinks: usize) -> usize {
    (ecmp_hash(&d.key, d.src, d.dst) % uplinks as u64) as usize
}

/// Greedy per-job routing: highest-utilization jobs first, each flow on the
/// uplink minimising the busier of its two endpoint uplinks.
pub fn crux_route(demands: &[DpDemand], racks: usize, uplinks: usize) -> BTreeMap<DemandKey, usize> {
    let mut order: Vec<&DpDemand> = demands.iter().collect();
    order.sort_by(|a, b| {
        b.utilization
            .total_cmp(&a.utilization)
            .then(a.key.job.cmp(&b.key.job))
            .then(a.key.cmp(&b.key))
    });
    let mut up = vec![vec![0usize; uplinks]; racks];
    let mut down = vec![vec![0usize; uplinks]; racks];
    let mut out = BTreeMap::new();
    for d in order {
        let c = (0..uplinks)
            .min_by_key(|&c| {
                let (u, w) = (up[d.src_rack][c], down[d.dst_rack][c]);
                (u.max(w), u + w, c)
            })
            .unwrap_or(0);
        up[d.src_rack][c] += 1;
        down[d.dst_rack][c] += 1;
        out.insert(d.key, c);
    }
    out
}

pub fn perfect_assignment(demands: &[DpDemand], racks: usize, uplinks: usize) -> BTreeMap<DemandKey, usize> {
    let mut sorted: Vec<&DpDemand> = demands.iter().collect();
    sorted.sort_by_key(|d| d.key);
    let g = DemandGraph {
        racks,
        edges: sorted.iter().map(|d| (d.src_rack, d.dst_rack)).collect(),
    };
    sorted
        .iter()
        .zip(perfect_route(&g, uplinks))
        .map(|(d, c)| (d.key, c))
        .collect()
}

/// Number of (rack, direction, uplink) slots carrying more than one of the
/// given demands.
pub fn shared_uplinks(assignment: &BTreeMap<DemandKey, usize>, demands: &[DpDemand]) -> usize {
    let mut count: BTreeMap<(usize, bool, usize), usize> = BTreeMap::new();
    for d in demands {
        if let Some(&c) = assignment.get(&d.key) {
            *count.entry((d.src_rack, true, c)).or_default() += 1;
            *count.entry((d.dst_rack, false, c)).or_default() += 1;
        }
    }
    count.values().filter(|&&n| n > 1).count()
}

/// Routing state owned by one simulation.
#[derive(Debug, Clone)]
pub struct Router {
    strategy: RoutingStrategy,
    racks: usize,
    uplinks: usize,
    table: BTreeMap<DemandKey, usize>,
    mice_cursor: Vec<usize>,
    sglb: SglbConfig,
}

impl Router {
    pub fn new(strategy: RoutingStrategy, topo: &ClusterTopology, sglb: SglbConfig) -> Result<Self> {
        if strategy == RoutingStrategy::Spray && !topo.is_full_bisection() {
            return Err(Error::Config(format!(
                "packet spraying needs a full-bisection fabric, oversubscription is {:.2}",
                topo.oversubscription()
            )));
        }
        if !(sglb.epoch > 0.0) || !(sglb.hysteresis >= 1.0) {
            return Err(Error::Config("sglb epoch must be positive and hysteresis >= 1".into()));
        }
        Ok(Router {
            strategy,
            racks: topo.num_racks,
            uplinks: topo.uplinks_per_tor,
            table: BTreeMap::new(),
            mice_cursor: vec![0; topo.num_racks],
            sglb,
        })
    }

    pub fn strategy(&self) -> RoutingStrategy {
        self.strategy
    }

    pub fn sglb_config(&self) -> SglbConfig {
        self.sglb
    }

    pub fn table(&self) -> &BTreeMap<DemandKey, usize> {
        &self.table
    }

    /// Rebuilds the DP assignment for the current demand set.
    pub fn recompute(&mut self, demands: &[DpDemand]) {
        self.table = match self.strategy {
            RoutingStrategy::Perfect => perfect_assignment(demands, self.racks, self.uplinks),
            RoutingStrategy::Crux => crux_route(demands, self.racks, self.uplinks),
            RoutingStrategy::Ecmp | RoutingStrategy::Spray => {
                demands.iter().map(|d| (d.key, ecmp_route(d, self.uplinks))).collect()
            }
            RoutingStrategy::Sglb => demands
                .iter()
                .map(|d| {
                    let c = self.table.get(&d.key).copied().unwrap_or_else(|| ecmp_route(d, self.uplinks));
                    (d.key, c)
                })
                .collect(),
        };
    }

    pub fn dp_choice(&self, key: &DemandKey) -> UplinkChoice {
        if self.strategy == RoutingStrategy::Spray {
            return UplinkChoice::Sprayed;
        }
        let c = self.table.get(key).copied().unwrap_or(0);
        UplinkChoice::Pinned { src: c, dst: c }
    }

    /// Next round-robin uplink at the source ToR.
    pub fn mice_choice(&mut self, src_rack: usize) -> UplinkChoice {
        if self.strategy == RoutingStrategy::Spray {
            return UplinkChoice::Sprayed;
        }
        let c = self.mice_cursor[src_rack];
        self.mice_cursor[src_rack] = (c + 1) % self.uplinks;
        UplinkChoice::Pinned { src: c, dst: c }
    }

    /// One rebalancing round over the DP flows currently transmitting.
    /// Every ToR direction whose uplink exceeds the mean by the hysteresis
    /// factor sheds one flow, provided the move lowers the sum of squared
    /// uplink loads (so rounds always terminate). Returns the moved flows.
    pub fn sglb_step(&mut self, active: &[DpDemand]) -> Vec<DemandKey> {
        let u = self.uplinks;
        let mut up = vec![vec![0usize; u]; self.racks];
        let mut down = vec![vec![0usize; u]; self.racks];
        for d in active {
            let c = self.table[&d.key];
            up[d.src_rack][c] += 1;
            down[d.dst_rack][c] += 1;
        }
        let mut moved = Vec::new();
        for rack in 0..self.racks {
            for upward in [true, false] {
                for c in 0..u {
                    let loads = if upward { &up[rack] } else { &down[rack] };
                    let total: usize = loads.iter().sum();
                    let l = loads[c];
                    if l < 2 || (l as f64) <= self.sglb.hysteresis * total as f64 / u as f64 {
                        continue;
                    }
                    let flow = active.iter().find(|d| {
                        self.table[&d.key] == c
                            && !moved.contains(&d.key)
                            && if upward { d.src_rack == rack } else { d.dst_rack == rack }
                    });
                    let Some(d) = flow else { continue };
                    let (s, t) = (d.src_rack, d.dst_rack);
                    let target = (0..u)
                        .filter(|&x| x != c)
                        .min_by_key(|&x| (up[s][x] + down[t][x], x))
                        .filter(|&x| up[s][x] + down[t][x] + 2 < up[s][c] + down[t][c]);
                    if let Some(x) = target {
                        up[s][c] -= 1;
                        down[t][c] -= 1;
                        up[s][x] += 1;
                        down[t][x] += 1;
                        self.table.insert(d.key, x);
                        moved.push(d.key);
                    }
                }
            }
        }
        moved
    }
}
