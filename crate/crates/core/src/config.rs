//! Experiment configuration (TOML). Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::controller::{Algorithm, ControllerConfig};
use crate::error::{Error, Result};
use crate::jobmodel::DEFAULT_REINIT_SECONDS;
use crate::routing::SglbConfig;
use crate::sim::SimOptions;
use crate::solver::SolverOptions;
use crate::topology::{ClusterTopology, GBPS};
use crate::workload::{default_pp_menu, default_sizes, default_tp_menu, ModelTemplate, TraceConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyConfig {
    pub racks: usize,
    pub hosts_per_rack: usize,
    pub gpus_per_host: usize,
    pub uplinks_per_tor: usize,
    pub nic_gbps: f64,
    pub uplink_gbps: f64,
    /// Defaults to one spine per uplink.
    #[serde(default)]
    pub spines: Option<usize>,
}

impl TopologyConfig {
    pub fn build(&self) -> Result<ClusterTopology> {
        ClusterTopology::make_two_tier(
            self.racks,
            self.hosts_per_rack,
            self.gpus_per_host,
            self.uplinks_per_tor,
            self.nic_gbps * GBPS,
            self.uplink_gbps * GBPS,
            self.spines.unwrap_or(self.uplinks_per_tor),
        )
    }

    /// Same cluster with the uplink count set for a target oversubscription.
    pub fn with_oversubscription(&self, ratio: f64) -> Result<TopologyConfig> {
        let host_bw = (self.hosts_per_rack * self.gpus_per_host) as f64 * self.nic_gbps;
        let uplinks = host_bw / (ratio * self.uplink_gbps);
        let rounded = uplinks.round();
        if !(ratio > 0.0) || rounded < 1.0 || (uplinks - rounded).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "oversubscription {ratio} needs {uplinks} uplinks per ToR, not a positive integer"
            )));
        }
        Ok(TopologyConfig {
            uplinks_per_tor: rounded as usize,
            spines: None,
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceBlock {
    pub num_jobs: usize,
    /// Offered GPU loads, one run set per value.
    pub loads: Vec<f64>,
    #[serde(default = "one")]
    pub seeds: usize,
    pub min_iterations: u64,
    pub max_iterations: u64,
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub tp_menu: Option<Vec<usize>>,
    #[serde(default)]
    pub pp_menu: Option<Vec<usize>>,
    /// Replay this JSON-lines trace instead of generating one.
    #[serde(default)]
    pub file: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl TraceBlock {
    pub fn trace_config(&self) -> TraceConfig {
        TraceConfig {
            num_jobs: self.num_jobs,
            sizes: self.sizes.clone().unwrap_or_else(default_sizes),
            tp_menu: self.tp_menu.clone().unwrap_or_else(default_tp_menu),
            pp_menu: self.pp_menu.clone().unwrap_or_else(default_pp_menu),
            min_iterations: self.min_iterations,
            max_iterations: self.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerBlock {
    pub threshold: Option<usize>,
    /// Overrides the algorithm's migration setting.
    pub migration: Option<bool>,
    pub reinit_seconds: f64,
    pub solver_node_limit: u64,
    pub solver_time_limit_seconds: f64,
    pub charge_solver_latency: bool,
    pub sglb_epoch: f64,
    pub sglb_hysteresis: f64,
}

impl Default for ControllerBlock {
    fn default() -> Self {
        let s = SolverOptions::default();
        let g = SglbConfig::default();
        ControllerBlock {
            threshold: None,
            migration: None,
            reinit_seconds: DEFAULT_REINIT_SECONDS,
            solver_node_limit: s.node_limit,
            solver_time_limit_seconds: s.time_limit.as_secs_f64(),
            charge_solver_latency: false,
            sglb_epoch: g.epoch,
            sglb_hysteresis: g.hysteresis,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    /// Host-to-uplink bandwidth ratios.
    pub oversubscription: Vec<f64>,
    /// Fragmentation thresholds.
    pub thresholds: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub topology: TopologyConfig,
    /// Model templates; the built-in menu when absent.
    #[serde(default)]
    pub models: Option<Vec<ModelTemplate>>,
    pub trace: TraceBlock,
    #[serde(default = "all_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default)]
    pub controller: ControllerBlock,
    #[serde(default)]
    pub sim: SimOptions,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn all_algorithms() -> Vec<Algorithm> {
    vec![
        Algorithm::Monkeytree,
        Algorithm::PerfectOnly,
        Algorithm::Sglb,
        Algorithm::Crux,
        Algorithm::Ecmp,
    ]
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // relative trace files resolve against the config's directory
        if let (Some(f), Some(dir)) = (cfg.trace.file.as_mut(), path.parent()) {
            if f.is_relative() {
                *f = dir.join(&*f);
            }
        }
        Ok(cfg)
    }

    pub fn models(&self) -> Vec<ModelTemplate> {
        self.models.clone().unwrap_or_else(ModelTemplate::default_menu)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.topology.build()?;
        for m in self.models() {
            m.validate()?;
        }
        let t = &self.trace;
        if t.loads.is_empty() || t.loads.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return bad("trace.loads must be a non-empty list of positive numbers".into());
        }
        if t.seeds == 0 {
            return bad("trace.seeds must be at least 1".into());
        }
        if t.min_iterations == 0 || t.min_iterations > t.max_iterations {
            return bad("trace iteration range is empty".into());
        }
        if self.algorithms.is_empty() {
            return bad("algorithms must not be empty".into());
        }
        let c = &self.controller;
        if !(c.reinit_seconds >= 0.0) || !(c.solver_time_limit_seconds > 0.0) || c.solver_node_limit == 0 {
            return bad("controller limits must be positive".into());
        }
        if !(c.sglb_epoch > 0.0) || !(c.sglb_hysteresis >= 1.0) {
            return bad("sglb epoch must be positive and hysteresis at least 1".into());
        }
        if let Some(dt) = self.sim.util_sample_interval {
            if !(dt > 0.0) {
                return bad("sim.util_sample_interval must be positive".into());
            }
        }
        for &r in &self.sweep.oversubscription {
            self.topology.with_oversubscription(r)?;
        }
        if self.sweep.thresholds.contains(&0) {
            return bad("sweep thresholds must be positive".into());
        }
        Ok(())
    }

    pub fn controller_for(&self, alg: Algorithm) -> Result<ControllerConfig> {
        let c = &self.controller;
        let mut out = ControllerConfig::for_algorithm(alg);
        out.threshold = c.threshold;
        if let Some(m) = c.migration {
            out.migration = m;
        }
        out.reinit_seconds = c.reinit_seconds;
        out.solver = SolverOptions {
            node_limit: c.solver_node_limit,
            time_limit: Duration::try_from_secs_f64(c.solver_time_limit_seconds)
                .map_err(|e| Error::Config(e.to_string()))?,
        };
        out.charge_solver_latency = c.charge_solver_latency;
        out.sglb = SglbConfig {
            epoch: c.sglb_epoch,
            hysteresis: c.sglb_hysteresis,
        };
        Ok(out)
    }
}
