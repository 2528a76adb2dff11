//! Two-tier spine-leaf fabric.
//!
//! Hosts hang off a top-of-rack (ToR) switch, every ToR connects to the spine
//! layer through `uplinks_per_tor` uplinks, and uplink `i` on every ToR lands
//! on spine `i % num_spines`. Only host NICs and ToR uplinks are capacity
//! constrained; switch fabrics are non-blocking. Intra-host traffic never
//! enters the network model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bits per second.
pub type Bandwidth = f64;

/// One gigabit per second.
pub const GBPS: Bandwidth = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterTopology {
    pub num_racks: usize,
    pub hosts_per_rack: usize,
    /// One NIC per GPU.
    pub gpus_per_host: usize,
    pub uplinks_per_tor: usize,
    /// bits/s
    pub nic_bandwidth: Bandwidth,
    /// bits/s
    pub uplink_bandwidth: Bandwidth,
    pub num_spines: usize,
}

/// Global GPU index, rack-major then host then slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GpuId(pub usize);

/// Global host index, rack-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HostId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LinkId {
    /// The NIC of one GPU.
    HostNic { gpu: GpuId, dir: Direction },
    /// Uplink `uplink` of the ToR in `rack`.
    TorUplink {
        rack: usize,
        uplink: usize,
        dir: Direction,
    },
    /// All uplinks of a ToR treated as a single fluid pipe (packet spraying).
    TorAggregate { rack: usize, dir: Direction },
}

/// How a cross-rack path crosses the ToR-spine layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UplinkChoice {
    /// Use a specific uplink at the source and at the destination ToR.
    Pinned { src: usize, dst: usize },
    /// Spread over all uplinks (fluid).
    Sprayed,
}

impl ClusterTopology {
    pub fn make_two_tier(
        racks: usize,
        hosts_per_rack: usize,
        gpus_per_host: usize,
        uplinks: usize,
        nic_bw: Bandwidth,
        uplink_bw: Bandwidth,
        spines: usize,
    ) -> Result<Self> {
        let topo = ClusterTopology {
            num_racks: racks,
            hosts_per_rack,
            gpus_per_host,
            uplinks_per_tor: uplinks,
            nic_bandwidth: nic_bw,
            uplink_bandwidth: uplink_bw,
            num_spines: spines,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_racks", self.num_racks),
            ("hosts_per_rack", self.hosts_per_rack),
            ("gpus_per_host", self.gpus_per_host),
            ("uplinks_per_tor", self.uplinks_per_tor),
            ("num_spines", self.num_spines),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Topology(format!("{name} must be at least 1")));
            }
        }
        if !(self.nic_bandwidth > 0.0 && self.nic_bandwidth.is_finite())
            || !(self.uplink_bandwidth > 0.0 && self.uplink_bandwidth.is_finite())
        {
            return Err(Error::Topology("bandwidths must be positive".into()));
        }
        if !self.uplinks_per_tor.is_multiple_of(self.num_spines) {
            return Err(Error::Topology(format!(
                "{} uplinks cannot be spread evenly over {} spines",
                self.uplinks_per_tor, self.num_spines
            )));
        }
        Ok(())
    }

    pub fn total_gpus(&self) -> usize {
        self.num_racks * self.hosts_per_rack * self.gpus_per_host
    }

    pub fn total_hosts(&self) -> usize {
        self.num_racks * self.hosts_per_rack
    }

    pub fn gpus_per_rack(&self) -> usize {
        self.hosts_per_rack * self.gpus_per_host
    }

    /// Host NIC bandwidth under a ToR divided by its uplink bandwidth.
    pub fn oversubscription(&self) -> f64 {
        (self.gpus_per_rack() as f64 * self.nic_bandwidth)
            / (self.uplinks_per_tor as f64 * self.uplink_bandwidth)
    }

    pub fn is_full_bisection(&self) -> bool {
        self.oversubscription() <= 1.0 + 1e-12
    }

    pub fn spine_of_uplink(&self, uplink: usize) -> usize {
        uplink % self.num_spines
    }

    pub fn rack_of_host(&self, host: HostId) -> usize {
        host.0 / self.hosts_per_rack
    }

    pub fn host_of_gpu(&self, gpu: GpuId) -> HostId {
        HostId(gpu.0 / self.gpus_per_host)
    }

    pub fn rack_of_gpu(&self, gpu: GpuId) -> usize {
        self.rack_of_host(self.host_of_gpu(gpu))
    }

    pub fn gpu(&self, host: HostId, slot: usize) -> GpuId {
        debug_assert!(slot < self.gpus_per_host);
        GpuId(host.0 * self.gpus_per_host + slot)
    }

    pub fn host(&self, rack: usize, index: usize) -> HostId {
        debug_assert!(index < self.hosts_per_rack);
        HostId(rack * self.hosts_per_rack + index)
    }

    pub fn hosts_in_rack(&self, rack: usize) -> impl Iterator<Item = HostId> {
        let base = rack * self.hosts_per_rack;
        (base..base + self.hosts_per_rack).map(HostId)
    }

    pub fn link_capacity(&self, link: LinkId) -> Bandwidth {
        match link {
            LinkId::HostNic { .. } => self.nic_bandwidth,
            LinkId::TorUplink { .. } => self.uplink_bandwidth,
            LinkId::TorAggregate { .. } => self.uplinks_per_tor as f64 * self.uplink_bandwidth,
        }
    }

    /// Links traversed from `src` to `dst`.
    ///
    /// Same host: empty (NVLink is not modelled). Same rack: both NICs.
    /// Cross rack: source NIC, one uplink at each ToR, destination NIC.
    pub fn path_between(&self, src: GpuId, dst: GpuId, uplinks: UplinkChoice) -> Result<Vec<LinkId>> {
        let total = self.total_gpus();
        if src.0 >= total || dst.0 >= total {
            return Err(Error::Topology(format!("gpu out of range: {src:?} -> {dst:?}")));
        }
        if src == dst {
            return Err(Error::Topology("path endpoints must differ".into()));
        }
        if self.host_of_gpu(src) == self.host_of_gpu(dst) {
            return Ok(Vec::new());
        }
        let up = LinkId::HostNic {
            gpu: src,
            dir: Direction::Up,
        };
        let down = LinkId::HostNic {
            gpu: dst,
            dir: Direction::Down,
        };
        let (sr, dr) = (self.rack_of_gpu(src), self.rack_of_gpu(dst));
        if sr == dr {
            return Ok(vec![up, down]);
        }
        let (a, b) = match uplinks {
            UplinkChoice::Pinned { src: us, dst: ud } => {
                if us >= self.uplinks_per_tor || ud >= self.uplinks_per_tor {
                    return Err(Error::Topology(format!(
                        "uplink index ({us}, {ud}) out of range for {} uplinks",
                        self.uplinks_per_tor
                    )));
                }
                (
                    LinkId::TorUplink {
                        rack: sr,
                        uplink: us,
                        dir: Direction::Up,
                    },
                    LinkId::TorUplink {
                        rack: dr,
                        uplink: ud,
                        dir: Direction::Down,
                    },
                )
            }
            UplinkChoice::Sprayed => (
                LinkId::TorAggregate {
                    rack: sr,
                    dir: Direction::Up,
                },
                LinkId::TorAggregate {
                    rack: dr,
                    dir: Direction::Down,
                },
            ),
        };
        Ok(vec![up, a, b, down])
    }
}
