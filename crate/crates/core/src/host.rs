use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Edge,
    Cloud,
}

/// Static capacities of one machine. `mips` and task `demand_ips` share a
/// unit; bandwidth is MB/s and latency milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostSpec {
    pub id: usize,
    pub tier: Tier,
    pub cores: u32,
    pub mips: f64,
    pub ram: f64,
    pub disk: f64,
    pub bandwidth: f64,
    pub base_latency: f64,
    pub power_idle: f64,
    pub power_peak: f64,
    pub cost_per_hour: f64,
}

impl HostSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::ConfigInvalid(format!("host {}: {what}", self.id)));
        if !(self.mips > 0.0) {
            return bad("mips must be positive");
        }
        if !(self.bandwidth > 0.0) {
            return bad("bandwidth must be positive");
        }
        if !(self.ram > 0.0 && self.disk > 0.0) {
            return bad("ram and disk must be positive");
        }
        if !(self.power_idle >= 0.0 && self.power_peak >= self.power_idle) {
            return bad("need power_peak >= power_idle >= 0");
        }
        if self.cost_per_hour < 0.0 || self.base_latency < 0.0 {
            return bad("negative cost or latency");
        }
        Ok(())
    }
}

/// Four hosts: three edge machines (two small, one medium) and one larger
/// cloud machine. Figures loosely follow small burstable VM sizes.
pub fn desk_hosts() -> Vec<HostSpec> {
    let edge = |id, cores, mips, ram, idle, peak, cost| HostSpec {
        id,
        tier: Tier::Edge,
        cores,
        mips,
        ram,
        disk: 4.0 * ram,
        bandwidth: 100.0,
        base_latency: 1.0,
        power_idle: idle,
        power_peak: peak,
        cost_per_hour: cost,
    };
    vec![
        edge(0, 2, 4029.0, 4096.0, 60.0, 120.0, 0.0416),
        edge(1, 2, 4029.0, 4096.0, 60.0, 120.0, 0.0416),
        edge(2, 4, 8102.0, 16384.0, 90.0, 200.0, 0.166),
        HostSpec {
            id: 3,
            tier: Tier::Cloud,
            cores: 8,
            mips: 16020.0,
            ram: 32768.0,
            disk: 131072.0,
            bandwidth: 50.0,
            base_latency: 10.0,
            power_idle: 180.0,
            power_peak: 450.0,
            cost_per_hour: 0.333,
        },
    ]
}

/// Reads a JSON list of host specs and checks each one.
pub fn load_hosts(path: &Path) -> Result<Vec<HostSpec>> {
    let hosts: Vec<HostSpec> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    validate_hosts(&hosts)?;
    Ok(hosts)
}

pub fn save_hosts(path: &Path, hosts: &[HostSpec]) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(hosts)?)?;
    Ok(())
}

pub fn validate_hosts(hosts: &[HostSpec]) -> Result<()> {
    if hosts.is_empty() {
        return Err(Error::ConfigInvalid("no hosts".into()));
    }
    for (i, h) in hosts.iter().enumerate() {
        if h.id != i {
            return Err(Error::ConfigInvalid(format!(
                "host at position {i} has id {}",
                h.id
            )));
        }
        h.validate()?;
    }
    Ok(())
}
