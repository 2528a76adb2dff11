//! Fluid flows over capacitated links with max-min fair sharing, plus the
//! deterministic event queue that drives a simulation.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::topology::{ClusterTopology, Direction, LinkId};
use crate::workload::JobId;

/// Relative slack allowed when comparing rates, shares and finish times.
const REL_EPS: f64 = 1e-12;

/// Max-min fair rates by progressive filling: repeatedly take the links with
/// the smallest equal share of their residual capacity, fix every unfixed
/// flow crossing them at that share, and continue with the rest.
pub fn maxmin_rates(paths: &[Vec<usize>], capacity: &[f64]) -> Result<Vec<f64>> {
    let mut residual = capacity.to_vec();
    let mut open = vec![0usize; capacity.len()];
    let mut on_link: Vec<Vec<usize>> = vec![Vec::new(); capacity.len()];
    for (f, p) in paths.iter().enumerate() {
        if p.is_empty() {
            return Err(Error::Flow(format!("flow {f} has an empty path")));
        }
        for &l in p {
            if l >= capacity.len() {
                return Err(Error::Flow(format!("flow {f} uses unknown link {l}")));
            }
            open[l] += 1;
            on_link[l].push(f);
        }
    }
    let mut rate = vec![0.0; paths.len()];
    let mut fixed = vec![false; paths.len()];
    let mut active: Vec<usize> = (0..capacity.len()).filter(|&l| open[l] > 0).collect();
    while !active.is_empty() {
        let share = |l: usize, residual: &[f64], open: &[usize]| residual[l].max(0.0) / open[l] as f64;
        let s = active
            .iter()
            .map(|&l| share(l, &residual, &open))
            .fold(f64::INFINITY, f64::min);
        let tight: Vec<usize> = active
            .iter()
            .copied()
            .filter(|&l| share(l, &residual, &open) <= s * (1.0 + REL_EPS))
            .collect();
        for l in tight {
            for i in 0..on_link[l].len() {
                let f = on_link[l][i];
                if fixed[f] {
                    continue;
                }
                fixed[f] = true;
                rate[f] = s;
                for &m in &paths[f] {
                    residual[m] -= s;
                    open[m] -= 1;
                }
            }
        }
        active.retain(|&l| open[l] > 0);
    }
    Ok(rate)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    Dp,
    Pp,
    Migration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct FlowOwner {
    pub job: JobId,
    pub kind: FlowKind,
    /// Caller-defined sub-identifier (hop, transfer, ...).
    pub tag: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowId(pub u64);

#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub id: FlowId,
    pub links: Vec<usize>,
    pub size_bits: f64,
    pub remaining_bits: f64,
    /// bits/s
    pub rate: f64,
    pub owner: FlowOwner,
}

/// Link index layout: NICs, then per-uplink links, then ToR aggregates,
/// each with an up and a down direction.
#[derive(Debug, Clone)]
pub struct LinkTable {
    gpus: usize,
    racks: usize,
    uplinks: usize,
    capacity: Vec<f64>,
}

fn dir_bit(d: Direction) -> usize {
    match d {
        Direction::Up => 0,
        Direction::Down => 1,
    }
}

impl LinkTable {
    pub fn new(topo: &ClusterTopology) -> Self {
        let gpus = topo.total_gpus();
        let (racks, uplinks) = (topo.num_racks, topo.uplinks_per_tor);
        let n = 2 * gpus + 2 * racks * uplinks + 2 * racks;
        let mut capacity = vec![topo.nic_bandwidth; n];
        for c in &mut capacity[2 * gpus..2 * gpus + 2 * racks * uplinks] {
            *c = topo.uplink_bandwidth;
        }
        for c in &mut capacity[2 * gpus + 2 * racks * uplinks..] {
            *c = uplinks as f64 * topo.uplink_bandwidth;
        }
        LinkTable {
            gpus,
            racks,
            uplinks,
            capacity,
        }
    }

    pub fn index(&self, l: LinkId) -> usize {
        match l {
            LinkId::HostNic { gpu, dir } => 2 * gpu.0 + dir_bit(dir),
            LinkId::TorUplink { rack, uplink, dir } => 2 * self.gpus + 2 * (rack * self.uplinks + uplink) + dir_bit(dir),
            LinkId::TorAggregate { rack, dir } => 2 * self.gpus + 2 * self.racks * self.uplinks + 2 * rack + dir_bit(dir),
        }
    }

    /// Uplink index when `link` is a per-uplink ToR link.
    pub fn as_uplink(&self, link: usize) -> Option<(usize, usize, Direction)> {
        let base = 2 * self.gpus;
        if link < base || link >= base + 2 * self.racks * self.uplinks {
            return None;
        }
        let k = (link - base) / 2;
        let dir = if (link - base).is_multiple_of(2) { Direction::Up } else { Direction::Down };
        Some((k / self.uplinks, k % self.uplinks, dir))
    }

    pub fn capacity(&self) -> &[f64] {
        &self.capacity
    }

    pub fn len(&self) -> usize {
        self.capacity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.capacity.is_empty()
    }
}

/// Active flows with lazily recomputed max-min rates.
#[derive(Debug, Clone)]
pub struct Network {
    links: LinkTable,
    flows: BTreeMap<FlowId, Flow>,
    next_id: u64,
    now: f64,
    dirty: bool,
    /// Largest residue (relative to size) snapped to zero at completion.
    worst_residue: f64,
    rate_updates: u64,
}

/// Residue tolerated when a flow is declared complete.
pub const COMPLETION_TOLERANCE: f64 = 1e-6;

impl Network {
    pub fn new(topo: &ClusterTopology) -> Self {
        Network {
            links: LinkTable::new(topo),
            flows: BTreeMap::new(),
            next_id: 0,
            now: 0.0,
            dirty: false,
            worst_residue: 0.0,
            rate_updates: 0,
        }
    }

    pub fn links(&self) -> &LinkTable {
        &self.links
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn flows(&self) -> impl Iterator<Item = &Flow> {
        self.flows.values()
    }

    pub fn flow(&self, id: FlowId) -> Option<&Flow> {
        self.flows.get(&id)
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn rate_updates(&self) -> u64 {
        self.rate_updates
    }

    fn resolve(&self, path: &[LinkId]) -> Result<Vec<usize>> {
        if path.is_empty() {
            return Err(Error::Flow("empty path".into()));
        }
        Ok(path.iter().map(|&l| self.links.index(l)).collect())
    }

    pub fn add_flow(&mut self, path: &[LinkId], bytes: f64, owner: FlowOwner) -> Result<FlowId> {
        if !(bytes >= 0.0) || !bytes.is_finite() {
            return Err(Error::Flow(format!("invalid flow size {bytes}")));
        }
        let links = self.resolve(path)?;
        let id = FlowId(self.next_id);
        self.next_id += 1;
        self.flows.insert(
            id,
            Flow {
                id,
                links,
                size_bits: bytes * 8.0,
                remaining_bits: bytes * 8.0,
                rate: 0.0,
                owner,
            },
        );
        self.dirty = true;
        Ok(id)
    }

    pub fn set_path(&mut self, id: FlowId, path: &[LinkId]) -> Result<()> {
        let links = self.resolve(path)?;
        let f = self.flows.get_mut(&id).ok_or_else(|| Error::Flow(format!("unknown flow {}", id.0)))?;
        if f.links != links {
            f.links = links;
            self.dirty = true;
        }
        Ok(())
    }

    pub fn remove_flow(&mut self, id: FlowId) -> Option<Flow> {
        let f = self.flows.remove(&id);
        if f.is_some() {
            self.dirty = true;
        }
        f
    }

    fn refresh_rates(&mut self) {
        if !self.dirty {
            return;
        }
        let paths: Vec<Vec<usize>> = self.flows.values().map(|f| f.links.clone()).collect();
        let rates = maxmin_rates(&paths, self.links.capacity()).expect("paths validated on insert");
        for (f, r) in self.flows.values_mut().zip(rates) {
            f.rate = r;
        }
        self.dirty = false;
        self.rate_updates += 1;
    }

    /// Moves the clock forward, draining every flow at its current rate.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        if t < self.now {
            return Err(Error::Invariant(format!("clock moved backwards: {t} < {}", self.now)));
        }
        self.refresh_rates();
        let dt = t - self.now;
        if dt > 0.0 {
            for f in self.flows.values_mut() {
                f.remaining_bits -= f.rate * dt;
            }
        }
        self.now = t;
        Ok(())
    }

    fn finish_time(&self, f: &Flow) -> f64 {
        if f.remaining_bits <= 0.0 {
            self.now
        } else if f.rate > 0.0 {
            self.now + f.remaining_bits / f.rate
        } else {
            f64::INFINITY
        }
    }

    /// Earliest time at which some flow completes.
    pub fn next_completion(&mut self) -> Option<f64> {
        self.refresh_rates();
        self.flows
            .values()
            .map(|f| self.finish_time(f))
            .filter(|t| t.is_finite())
            .min_by(f64::total_cmp)
    }

    /// Removes and returns the flows finishing at the current time.
    pub fn take_completed(&mut self) -> Vec<Flow> {
        self.refresh_rates();
        let now = self.now;
        let slack = now.abs() * 1e-12 + 1e-12;
        let done: Vec<FlowId> = self
            .flows
            .values()
            .filter(|f| self.finish_time(f) <= now + slack)
            .map(|f| f.id)
            .collect();
        let mut out = Vec::with_capacity(done.len());
        for id in done {
            let mut f = self.flows.remove(&id).expect("listed above");
            if f.size_bits > 0.0 {
                self.worst_residue = self.worst_residue.max(f.remaining_bits.abs() / f.size_bits);
            }
            f.remaining_bits = 0.0;
            out.push(f);
        }
        if !out.is_empty() {
            self.dirty = true;
        }
        out
    }

    /// Sum of current rates per link.
    pub fn link_loads(&mut self) -> Vec<f64> {
        self.refresh_rates();
        let mut load = vec![0.0; self.links.len()];
        for f in self.flows.values() {
            for &l in &f.links {
                load[l] += f.rate;
            }
        }
        load
    }

    /// Every link within capacity, no flow overdrawn, and every completed
    /// flow delivered its declared size.
    pub fn conservation_check(&mut self) -> bool {
        let load = self.link_loads();
        let cap = self.links.capacity();
        let links_ok = load.iter().zip(cap).all(|(&l, &c)| l <= c * (1.0 + 1e-9));
        let flows_ok = self
            .flows
            .values()
            .all(|f| f.rate >= 0.0 && f.remaining_bits >= -COMPLETION_TOLERANCE * f.size_bits.max(1.0));
        links_ok && flows_ok && self.worst_residue <= COMPLETION_TOLERANCE
    }

    /// Test hook: overrides one flow's rate without recomputation.
    #[doc(hidden)]
    pub fn force_rate(&mut self, id: FlowId, rate: f64) {
        self.refresh_rates();
        if let Some(f) = self.flows.get_mut(&id) {
            f.rate = rate;
        }
    }
}

struct Entry<E> {
    time: f64,
    rank: u8,
    seq: u64,
    event: E,
}

impl<E> Entry<E> {
    fn key(&self) -> (f64, u8, u64) {
        (self.time, self.rank, self.seq)
    }
}

impl<E> PartialEq for Entry<E> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<E> Eq for Entry<E> {}

impl<E> PartialOrd for Entry<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<E> Ord for Entry<E> {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(b.2.cmp(&a.2))
    }
}

/// Time-ordered events; ties broken by rank then insertion order.
pub struct EventQueue<E> {
    heap: BinaryHeap<Entry<E>>,
    seq: u64,
    now: f64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            seq: 0,
            now: 0.0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn push(&mut self, time: f64, rank: u8, event: E) -> Result<()> {
        if time < self.now || time.is_nan() {
            return Err(Error::Invariant(format!("event scheduled in the past: {time} < {}", self.now)));
        }
        self.heap.push(Entry {
            time,
            rank,
            seq: self.seq,
            event,
        });
        self.seq += 1;
        Ok(())
    }

    pub fn peek(&self) -> Option<(f64, u8)> {
        self.heap.peek().map(|e| (e.time, e.rank))
    }

    pub fn pop(&mut self) -> Option<(f64, E)> {
        let e = self.heap.pop()?;
        self.now = e.time;
        Some((e.time, e.event))
    }
}

/// Running SHA-256 over event records, optionally mirrored to a writer.
pub struct EventLog {
    hasher: Sha256,
    sink: Option<Box<dyn Write + Send>>,
    count: u64,
}

impl Default for EventLog {
    fn default() -> Self {
        EventLog {
            hasher: Sha256::new(),
            sink: None,
            count: 0,
        }
    }
}

impl EventLog {
    pub fn with_sink(sink: Box<dyn Write + Send>) -> Self {
        EventLog {
            sink: Some(sink),
            ..Default::default()
        }
    }

    /// Records one event; times are hashed by their exact bit pattern.
    pub fn record(&mut self, time: f64, kind: &str, detail: std::fmt::Arguments<'_>) -> Result<()> {
        let line = format!("{:016x} {time:.9} {kind} {detail}\n", time.to_bits());
        self.hasher.update(line.as_bytes());
        self.count += 1;
        if let Some(w) = self.sink.as_mut() {
            w.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn digest(&self) -> String {
        self.hasher
            .clone()
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(w) = self.sink.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}
