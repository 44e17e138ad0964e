//! Cloud GPU instance types and intra-node bandwidth sharing.
//!
//! Catalog files express bandwidths in Gbps, disk throughput in Mbps, memory in
//! GB and latencies in microseconds. Everything is converted to bytes, bytes per
//! second and seconds on load.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::units::{gbps_to_bytes_per_sec, mbps_to_bytes_per_sec, BYTES_PER_GB};
use crate::{Error, Result};

/// The catalog shipped with the repository, seeded from published AWS P2, P3
/// and P4 instance data. Interconnect bandwidths and latencies, network
/// latency, disk throughput and CPU pre-processing rates in this file are
/// calibration constants, not measurements.
pub const DEFAULT_CATALOG_JSON: &str = include_str!("../../../catalog/aws_p.json");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterconnectKind {
    /// A bus whose aggregate bandwidth is split across every active GPU (PCIe).
    #[serde(alias = "SharedBus")]
    SharedBus,
    /// Point-to-point links (NVLink). Degrades by `slicing_penalty` when only
    /// part of the crossbar is allocated.
    #[serde(alias = "Crossbar")]
    Crossbar,
    /// Non-blocking switch (NVSwitch); no sharing.
    #[serde(alias = "Switch")]
    Switch,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InterconnectSpec {
    pub kind: InterconnectKind,
    /// Bytes per second.
    pub aggregate_bandwidth: f64,
    /// Seconds.
    pub per_link_latency: f64,
    /// Multiplier in (0, 1] applied to a partially allocated crossbar.
    pub slicing_penalty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceSpec {
    pub name: String,
    pub gpu_count: u32,
    pub vcpus: u32,
    /// Total GPU memory across all GPUs, bytes.
    pub gpu_memory: u64,
    pub main_memory: u64,
    pub interconnect: InterconnectSpec,
    /// Bytes per second.
    pub network_bandwidth: f64,
    /// Seconds.
    pub network_latency: f64,
    /// Bytes per second.
    pub disk_throughput: f64,
    /// Samples per second that one vCPU can pre-process.
    pub cpu_prep_throughput: f64,
    /// USD per hour.
    pub price_per_hour: f64,
}

impl InstanceSpec {
    /// Checks the per-instance invariants; `at` prefixes field names in errors.
    pub fn validate_at(&self, at: &str) -> Result<()> {
        let field = |f: &str| format!("{at}{f}");
        if self.name.trim().is_empty() {
            return Err(Error::validation(field("name"), "must not be empty"));
        }
        if self.gpu_count < 1 {
            return Err(Error::validation(field("gpu_count"), "must be at least 1"));
        }
        if self.vcpus < 1 {
            return Err(Error::validation(field("vcpus"), "must be at least 1"));
        }
        if self.gpu_memory == 0 {
            return Err(Error::validation(field("gpu_memory_gb"), "must be positive"));
        }
        if self.main_memory == 0 {
            return Err(Error::validation(field("main_memory_gb"), "must be positive"));
        }
        let ic = &self.interconnect;
        positive(&field("interconnect.aggregate_bandwidth_gbps"), ic.aggregate_bandwidth)?;
        non_negative(&field("interconnect.latency_us"), ic.per_link_latency)?;
        if !(ic.slicing_penalty > 0.0 && ic.slicing_penalty <= 1.0) {
            return Err(Error::validation(
                field("interconnect.slicing_penalty"),
                format!("must lie in (0, 1], got {}", ic.slicing_penalty),
            ));
        }
        positive(&field("network_bandwidth_gbps"), self.network_bandwidth)?;
        non_negative(&field("network_latency_us"), self.network_latency)?;
        positive(&field("disk_throughput_mbps"), self.disk_throughput)?;
        positive(&field("cpu_prep_throughput_sps"), self.cpu_prep_throughput)?;
        positive(&field("price_per_hour_usd"), self.price_per_hour)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_at("")
    }

    /// GPU memory available to one GPU, bytes.
    pub fn gpu_memory_per_gpu(&self) -> u64 {
        self.gpu_memory / u64::from(self.gpu_count)
    }
}

fn positive(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(
            field,
            format!("must be positive and finite, got {v}"),
        ))
    }
}

fn non_negative(field: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(Error::validation(
            field,
            format!("must be non-negative and finite, got {v}"),
        ))
    }
}

/// Per-GPU bandwidth available for gradient exchange when `active_gpus` GPUs of
/// `inst` participate.
pub fn effective_per_gpu_bandwidth(inst: &InstanceSpec, active_gpus: u32) -> Result<f64> {
    if active_gpus < 1 || active_gpus > inst.gpu_count {
        return Err(Error::domain(format!(
            "active_gpus {active_gpus} outside 1..={} for {}",
            inst.gpu_count, inst.name
        )));
    }
    let ic = &inst.interconnect;
    Ok(match ic.kind {
        InterconnectKind::SharedBus => ic.aggregate_bandwidth / f64::from(active_gpus),
        InterconnectKind::Crossbar if active_gpus < inst.gpu_count => ic.aggregate_bandwidth * ic.slicing_penalty,
        InterconnectKind::Crossbar | InterconnectKind::Switch => ic.aggregate_bandwidth,
    })
}

/// A validated, immutable collection of instance types with unique names.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Catalog {
    instances: Vec<InstanceSpec>,
}

impl Catalog {
    pub fn new(instances: Vec<InstanceSpec>) -> Result<Self> {
        if instances.is_empty() {
            return Err(Error::validation("instances", "catalog must not be empty"));
        }
        let mut seen = HashSet::new();
        for (i, inst) in instances.iter().enumerate() {
            inst.validate_at(&format!("instances[{i}]."))?;
            if !seen.insert(inst.name.as_str()) {
                return Err(Error::validation(
                    format!("instances[{i}].name"),
                    format!("duplicate instance name {:?}", inst.name),
                ));
            }
        }
        Ok(Catalog { instances })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: CatalogFile = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        Catalog::new(file.instances.into_iter().map(RawInstance::into_spec).collect())
    }

    pub fn default_aws() -> Self {
        Catalog::from_json_str(DEFAULT_CATALOG_JSON).expect("shipped catalog is valid")
    }

    pub fn instances(&self) -> &[InstanceSpec] {
        &self.instances
    }

    pub fn get(&self, name: &str) -> Option<&InstanceSpec> {
        self.instances.iter().find(|i| i.name == name)
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Reads and validates a catalog file.
pub fn load_catalog(path: impl AsRef<Path>) -> Result<Catalog> {
    let text = Error::read_file(path.as_ref())?;
    Catalog::from_json_str(&text)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CatalogFile {
    instances: Vec<RawInstance>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInterconnect {
    kind: InterconnectKind,
    aggregate_bandwidth_gbps: f64,
    latency_us: f64,
    #[serde(default = "full_crossbar")]
    slicing_penalty: f64,
}

fn full_crossbar() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    name: String,
    gpu_count: u32,
    vcpus: u32,
    gpu_memory_gb: f64,
    main_memory_gb: f64,
    interconnect: RawInterconnect,
    network_bandwidth_gbps: f64,
    network_latency_us: f64,
    disk_throughput_mbps: f64,
    cpu_prep_throughput_sps: f64,
    price_per_hour_usd: f64,
}

fn gb_to_bytes(gb: f64) -> u64 {
    if gb.is_finite() && gb > 0.0 {
        (gb * BYTES_PER_GB).round() as u64
    } else {
        0
    }
}

impl RawInstance {
    fn into_spec(self) -> InstanceSpec {
        InstanceSpec {
            name: self.name,
            gpu_count: self.gpu_count,
            vcpus: self.vcpus,
            gpu_memory: gb_to_bytes(self.gpu_memory_gb),
            main_memory: gb_to_bytes(self.main_memory_gb),
            interconnect: InterconnectSpec {
                kind: self.interconnect.kind,
                aggregate_bandwidth: gbps_to_bytes_per_sec(self.interconnect.aggregate_bandwidth_gbps),
                per_link_latency: self.interconnect.latency_us * 1e-6,
                slicing_penalty: self.interconnect.slicing_penalty,
            },
            network_bandwidth: gbps_to_bytes_per_sec(self.network_bandwidth_gbps),
            network_latency: self.network_latency_us * 1e-6,
            disk_throughput: mbps_to_bytes_per_sec(self.disk_throughput_mbps),
            cpu_prep_throughput: self.cpu_prep_throughput_sps,
            price_per_hour: self.price_per_hour_usd,
        }
    }
}
