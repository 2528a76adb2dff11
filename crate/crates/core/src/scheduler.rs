//! Locality-aware host allocation with a FIFO admission queue.
//!
//! Jobs are allocated whole hosts. A job that fits in one rack goes to the
//! fitting rack with the fewest free hosts; otherwise the rack with the most
//! free hosts is filled first and the remainder is placed by the same rule.

use std::collections::{BTreeMap, VecDeque};

use crate::error::{Error, Result};
use crate::topology::{ClusterTopology, HostId};
use crate::workload::{JobId, JobLayout, JobSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostState {
    Free,
    Busy(JobId),
    /// Held for a worker that is migrating in.
    Reserved(JobId),
}

#[derive(Debug, Clone, PartialEq)]
pub enum PlaceOutcome {
    Placed(Vec<HostId>),
    Queued,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Placement {
    topo: ClusterTopology,
    hosts: Vec<HostState>,
    free_per_rack: Vec<usize>,
    layouts: BTreeMap<JobId, JobLayout>,
    queue: VecDeque<JobSpec>,
}

impl Placement {
    pub fn new(topo: &ClusterTopology) -> Placement {
        Placement {
            topo: topo.clone(),
            hosts: vec![HostState::Free; topo.total_hosts()],
            free_per_rack: vec![topo.hosts_per_rack; topo.num_racks],
            layouts: BTreeMap::new(),
            queue: VecDeque::new(),
        }
    }

    pub fn topology(&self) -> &ClusterTopology {
        &self.topo
    }

    pub fn host_state(&self, h: HostId) -> HostState {
        self.hosts[h.0]
    }

    pub fn free_hosts(&self, rack: usize) -> usize {
        self.free_per_rack[rack]
    }

    pub fn total_free(&self) -> usize {
        self.free_per_rack.iter().sum()
    }

    pub fn layout(&self, job: JobId) -> Option<&JobLayout> {
        self.layouts.get(&job)
    }

    pub fn layouts(&self) -> impl Iterator<Item = (JobId, &JobLayout)> {
        self.layouts.iter().map(|(k, v)| (*k, v))
    }

    pub fn active_jobs(&self) -> usize {
        self.layouts.len()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    /// Hosts of `job` per rack, the aggregate w(s, t) in host units.
    pub fn rack_counts(&self, job: JobId) -> Option<Vec<usize>> {
        let l = self.layouts.get(&job)?;
        let mut w = vec![0; self.topo.num_racks];
        for h in l.all_hosts() {
            w[self.topo.rack_of_host(h)] += 1;
        }
        Some(w)
    }

    fn set(&mut self, h: HostId, s: HostState) {
        let r = self.topo.rack_of_host(h);
        if self.hosts[h.0] == HostState::Free {
            self.free_per_rack[r] -= 1;
        }
        if s == HostState::Free {
            self.free_per_rack[r] += 1;
        }
        self.hosts[h.0] = s;
    }

    fn lowest_free(&self, rack: usize, n: usize) -> Vec<HostId> {
        self.topo
            .hosts_in_rack(rack)
            .filter(|h| self.hosts[h.0] == HostState::Free)
            .take(n)
            .collect()
    }

    /// Host choice for `need` hosts, or None if the cluster lacks room.
    fn choose_hosts(&self, need: usize) -> Option<Vec<HostId>> {
        if need > self.total_free() {
            return None;
        }
        let mut free = self.free_per_rack.clone();
        let mut picks: Vec<(usize, usize)> = Vec::new();
        let mut left = need;
        while left > 0 {
            let fit = (0..free.len()).filter(|&r| free[r] >= left).min_by_key(|&r| (free[r], r));
            if let Some(r) = fit {
                picks.push((r, left));
                break;
            }
            let r = (0..free.len()).max_by_key(|&r| (free[r], std::cmp::Reverse(r)))?;
            picks.push((r, free[r]));
            left -= free[r];
            free[r] = 0;
        }
        Some(picks.into_iter().flat_map(|(r, n)| self.lowest_free(r, n)).collect())
    }

    /// Places the job now or appends it to the FIFO queue. Jobs never
    /// overtake an earlier queued job.
    pub fn place_job(&mut self, job: &JobSpec) -> Result<PlaceOutcome> {
        job.validate(&self.topo)?;
        if self.layouts.contains_key(&job.job_id) || self.queue.iter().any(|q| q.job_id == job.job_id) {
            return Err(Error::Placement(format!("job {} already placed", job.job_id)));
        }
        if !self.queue.is_empty() {
            self.queue.push_back(job.clone());
            return Ok(PlaceOutcome::Queued);
        }
        Ok(self.try_place(job).map_or_else(
            || {
                self.queue.push_back(job.clone());
                PlaceOutcome::Queued
            },
            PlaceOutcome::Placed,
        ))
    }

    fn try_place(&mut self, job: &JobSpec) -> Option<Vec<HostId>> {
        let hosts = self.choose_hosts(job.hosts(&self.topo))?;
        for &h in &hosts {
            self.set(h, HostState::Busy(job.job_id));
        }
        self.layouts
            .insert(job.job_id, JobLayout::from_hosts(job, &self.topo, hosts.clone()));
        Some(hosts)
    }

    /// Frees every host held or reserved by the job. Returns the freed hosts.
    pub fn release_job(&mut self, job: JobId) -> Result<Vec<HostId>> {
        if self.layouts.remove(&job).is_none() {
            return Err(Error::UnknownJob(job.0));
        }
        let held: Vec<HostId> = (0..self.hosts.len())
            .map(HostId)
            .filter(|h| matches!(self.hosts[h.0], HostState::Busy(j) | HostState::Reserved(j) if j == job))
            .collect();
        for &h in &held {
            self.set(h, HostState::Free);
        }
        Ok(held)
    }

    /// Places the queue head if it fits.
    pub fn admit_next(&mut self) -> Option<(JobSpec, Vec<HostId>)> {
        let head = self.queue.front()?.clone();
        let hosts = self.try_place(&head)?;
        self.queue.pop_front();
        Some((head, hosts))
    }

    /// Admits queued jobs in FIFO order until the head does not fit.
    pub fn drain_queue(&mut self) -> Vec<(JobSpec, Vec<HostId>)> {
        std::iter::from_fn(|| self.admit_next()).collect()
    }

    /// Installs a layout directly, e.g. from an offline placement.
    pub fn insert_layout(&mut self, job: JobId, layout: JobLayout) -> Result<()> {
        for h in layout.all_hosts() {
            if self.hosts.get(h.0) != Some(&HostState::Free) {
                return Err(Error::Placement(format!("host {} is not free", h.0)));
            }
        }
        for h in layout.all_hosts() {
            self.set(h, HostState::Busy(job));
        }
        self.layouts.insert(job, layout);
        Ok(())
    }

    pub fn reserve(&mut self, h: HostId, job: JobId) -> Result<()> {
        if self.hosts[h.0] != HostState::Free {
            return Err(Error::Placement(format!("cannot reserve busy host {}", h.0)));
        }
        self.set(h, HostState::Reserved(job));
        Ok(())
    }

    /// Frees a host the job no longer uses without touching its layout.
    pub fn vacate(&mut self, h: HostId, job: JobId) -> Result<()> {
        match self.hosts[h.0] {
            HostState::Busy(j) | HostState::Reserved(j) if j == job => {
                self.set(h, HostState::Free);
                Ok(())
            }
            s => Err(Error::Placement(format!("job {job} does not hold host {} ({s:?})", h.0))),
        }
    }

    /// Hands a host over from its current holder to another job's reservation.
    pub fn hand_over(&mut self, h: HostId, from: JobId, to: JobId) -> Result<()> {
        self.vacate(h, from)?;
        self.reserve(h, to)
    }

    /// Marks a reserved host as used by the job.
    pub fn occupy(&mut self, h: HostId, job: JobId) -> Result<()> {
        match self.hosts[h.0] {
            HostState::Reserved(j) | HostState::Busy(j) if j == job => {
                self.set(h, HostState::Busy(job));
                Ok(())
            }
            s => Err(Error::Placement(format!("host {} not reserved for job {job} ({s:?})", h.0))),
        }
    }

    /// Replaces the job's layout, e.g. once its migrations complete.
    pub fn set_layout(&mut self, job: JobId, layout: JobLayout) -> Result<()> {
        let slot = self.layouts.get_mut(&job).ok_or(Error::UnknownJob(job.0))?;
        *slot = layout;
        Ok(())
    }

    /// Capacity and bookkeeping invariants.
    pub fn check(&self) -> Result<()> {
        let mut owner = vec![None; self.hosts.len()];
        for (j, l) in &self.layouts {
            for h in l.all_hosts() {
                if owner[h.0].replace(*j).is_some() {
                    return Err(Error::Invariant(format!("host {} double booked", h.0)));
                }
                if !matches!(self.hosts[h.0], HostState::Busy(x) if x == *j) {
                    return Err(Error::Invariant(format!("host {} state disagrees with layout", h.0)));
                }
            }
        }
        for r in 0..self.topo.num_racks {
            let free = self.topo.hosts_in_rack(r).filter(|h| self.hosts[h.0] == HostState::Free).count();
            if free != self.free_per_rack[r] {
                return Err(Error::Invariant(format!("rack {r} free count drifted")));
            }
        }
        Ok(())
    }
}
