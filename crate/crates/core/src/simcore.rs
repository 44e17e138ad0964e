//! Deterministic epoch simulator.
//!
//! An iteration runs two pipelined stages: the data stage (fetch from disk,
//! then CPU pre-processing) and the GPU stage (forward and backward compute
//! plus whatever gradient exchange is not hidden under the backward pass). The
//! iteration takes as long as the slower stage.
//!
//! The epoch time is reported as five additive components. The GPU stage is
//! always fully attributed (compute, interconnect-exposed, network-exposed);
//! any data-stage excess over it is attributed to prep first and then to
//! fetch. Every component is rounded to whole nanoseconds per iteration before
//! it is accumulated, so `total` is the exact sum of its parts.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::catalog::{effective_per_gpu_bandwidth, InstanceSpec};
use crate::dnnmodel::ModelDescriptor;
use crate::units::{duration_from_secs, serde_secs};
use crate::{Error, Result};

/// How the per-layer gradient exchange is costed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommMode {
    /// One latency plus one full transfer of the layer's gradient per layer.
    #[default]
    PerLayer,
    /// Ring all-reduce: `2(n-1)` latency steps and `2(g/n)(n-1)` bytes per
    /// worker.
    Ring,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    SingleNode,
    Ring,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NodeGroup {
    pub instance: InstanceSpec,
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterConfig {
    pub nodes: Vec<NodeGroup>,
    pub gpus_per_node_used: u32,
    pub topology: Topology,
    pub comm_mode: CommMode,
}

impl ClusterConfig {
    pub fn single_node(instance: InstanceSpec, gpus: u32) -> Self {
        ClusterConfig {
            nodes: vec![NodeGroup { instance, count: 1 }],
            gpus_per_node_used: gpus,
            topology: Topology::SingleNode,
            comm_mode: CommMode::default(),
        }
    }

    /// `count` identical instances arranged in a ring.
    pub fn ring(instance: InstanceSpec, count: u32, gpus_per_node: u32) -> Self {
        ClusterConfig {
            nodes: vec![NodeGroup { instance, count }],
            gpus_per_node_used: gpus_per_node,
            topology: if count > 1 {
                Topology::Ring
            } else {
                Topology::SingleNode
            },
            comm_mode: CommMode::default(),
        }
    }

    pub fn with_comm_mode(mut self, mode: CommMode) -> Self {
        self.comm_mode = mode;
        self
    }

    pub fn instance_count(&self) -> u32 {
        self.nodes.iter().map(|n| n.count).sum()
    }

    pub fn total_gpus(&self) -> u32 {
        self.instance_count() * self.gpus_per_node_used
    }

    /// Sum of hourly prices of every instance in the cluster.
    pub fn hourly_price(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| n.instance.price_per_hour * f64::from(n.count))
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() || self.instance_count() < 1 {
            return Err(Error::domain("a cluster needs at least one instance"));
        }
        if self.gpus_per_node_used < 1 {
            return Err(Error::domain("gpus_per_node_used must be at least 1"));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            node.instance.validate_at(&format!("nodes[{i}]."))?;
            if node.count < 1 {
                return Err(Error::domain(format!("nodes[{i}].count must be at least 1")));
            }
            if self.gpus_per_node_used > node.instance.gpu_count {
                return Err(Error::domain(format!(
                    "{} GPUs per node requested but {} has {}",
                    self.gpus_per_node_used, node.instance.name, node.instance.gpu_count
                )));
            }
        }
        if self.instance_count() > 1 && self.topology != Topology::Ring {
            return Err(Error::domain("multi-instance clusters must use the ring topology"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub total_samples: u64,
    pub per_gpu_batch_size: u32,
    /// Fraction of the dataset served from the page cache, in [0, 1].
    pub cached_fraction: f64,
}

impl DataConfig {
    pub fn new(total_samples: u64, per_gpu_batch_size: u32) -> Self {
        DataConfig {
            total_samples,
            per_gpu_batch_size,
            cached_fraction: 0.0,
        }
    }

    pub fn with_cached_fraction(mut self, f: f64) -> Self {
        self.cached_fraction = f;
        self
    }

    pub fn validate(&self, total_gpus: u32) -> Result<()> {
        if self.per_gpu_batch_size < 1 {
            return Err(Error::domain("per_gpu_batch_size must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.cached_fraction) {
            return Err(Error::domain(format!(
                "cached_fraction {} outside [0, 1]",
                self.cached_fraction
            )));
        }
        let global = u64::from(self.per_gpu_batch_size) * u64::from(total_gpus);
        if global > self.total_samples {
            return Err(Error::domain(format!(
                "global batch {global} exceeds the {} samples in the dataset",
                self.total_samples
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunFlags {
    /// Batches are pre-populated in GPU memory: no fetch, no pre-processing.
    pub synthetic_data: bool,
    /// Run on one GPU with the per-GPU share of the dataset.
    pub single_gpu_baseline: bool,
    /// Ignore the configured cache fraction and read everything from disk.
    pub cold_cache: bool,
}

impl RunFlags {
    pub const REAL_DATA: RunFlags = RunFlags {
        synthetic_data: false,
        single_gpu_baseline: false,
        cold_cache: false,
    };
    pub const SYNTHETIC: RunFlags = RunFlags {
        synthetic_data: true,
        single_gpu_baseline: false,
        cold_cache: false,
    };
    pub const SINGLE_GPU_BASELINE: RunFlags = RunFlags {
        synthetic_data: true,
        single_gpu_baseline: true,
        cold_cache: false,
    };
    pub const COLD_CACHE: RunFlags = RunFlags {
        synthetic_data: false,
        single_gpu_baseline: false,
        cold_cache: true,
    };

    pub fn validate(&self) -> Result<()> {
        if self.single_gpu_baseline && !self.synthetic_data {
            return Err(Error::domain("the single-GPU baseline requires synthetic data"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EpochTiming {
    #[serde(rename = "total_s", with = "serde_secs")]
    pub total: Duration,
    #[serde(rename = "fetch_s", with = "serde_secs")]
    pub fetch: Duration,
    #[serde(rename = "prep_s", with = "serde_secs")]
    pub prep: Duration,
    #[serde(rename = "compute_s", with = "serde_secs")]
    pub compute: Duration,
    #[serde(rename = "comm_interconnect_exposed_s", with = "serde_secs")]
    pub comm_interconnect_exposed: Duration,
    #[serde(rename = "comm_network_exposed_s", with = "serde_secs")]
    pub comm_network_exposed: Duration,
    pub iterations: u64,
}

impl EpochTiming {
    fn add_iterations(&mut self, it: &StageTimes, count: u64) -> Result<()> {
        if count == 0 {
            return Ok(());
        }
        let k = u32::try_from(count).map_err(|_| Error::domain("too many iterations"))?;
        let mul = |d: Duration| d.checked_mul(k).ok_or_else(|| Error::domain("epoch time overflow"));
        self.fetch += mul(it.fetch)?;
        self.prep += mul(it.prep)?;
        self.compute += mul(it.compute)?;
        self.comm_interconnect_exposed += mul(it.interconnect)?;
        self.comm_network_exposed += mul(it.network)?;
        self.iterations += count;
        self.total = self.fetch + self.prep + self.compute + self.comm_interconnect_exposed + self.comm_network_exposed;
        Ok(())
    }

    /// Sum of the two exposed communication components.
    pub fn comm_exposed(&self) -> Duration {
        self.comm_interconnect_exposed + self.comm_network_exposed
    }
}

/// Bytes each worker sends in an idealized ring all-reduce of `gradient_bytes`
/// across `n` workers: `2(G/n)(n-1)`.
///
/// The numerator is formed exactly in integers and divided once, so the result
/// is the correctly rounded value whenever `2G(n-1)` fits in 53 bits.
pub fn allreduce_per_worker_bytes(gradient_bytes: u64, n: u32) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let numerator = 2 * u128::from(gradient_bytes) * u128::from(n - 1);
    numerator as f64 / f64::from(n)
}

pub fn layer_comm_time(gradient_bytes: u64, latency: f64, bandwidth: f64, n: u32, mode: CommMode) -> Result<f64> {
    if bandwidth.is_nan() || bandwidth <= 0.0 {
        return Err(Error::domain(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if !(latency.is_finite() && latency >= 0.0) {
        return Err(Error::domain(format!("latency must be non-negative, got {latency}")));
    }
    if n < 1 {
        return Err(Error::domain("worker count must be at least 1"));
    }
    Ok(match mode {
        CommMode::PerLayer => latency + gradient_bytes as f64 / bandwidth,
        CommMode::Ring => 2.0 * f64::from(n - 1) * latency + allreduce_per_worker_bytes(gradient_bytes, n) / bandwidth,
    })
}

/// Gradient exchange time for one iteration: the sum over synchronization
/// layers of [`layer_comm_time`].
pub fn model_comm_time(model: &ModelDescriptor, latency: f64, bandwidth: f64, n: u32, mode: CommMode) -> Result<f64> {
    // validate even for models without sync layers
    layer_comm_time(0, latency, bandwidth, n, mode)?;
    model
        .sync_layers()
        .map(|l| layer_comm_time(l.gradient_bytes, latency, bandwidth, n, mode))
        .sum()
}

/// Per-iteration stage times after attribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct StageTimes {
    fetch: Duration,
    prep: Duration,
    compute: Duration,
    interconnect: Duration,
    network: Duration,
}

/// Everything about a run that does not depend on the batch size.
struct RunPlan<'a> {
    model: &'a ModelDescriptor,
    workers: u32,
    gpus_per_node: u32,
    forward_per_sample: f64,
    backward_per_sample: f64,
    /// Raw exchange times per iteration: interconnect alone, and the full
    /// exchange over the bottleneck link (equal on a single node).
    comm_interconnect: Duration,
    comm_total: Duration,
    multi_node: bool,
    data: Option<DataPath>,
}

struct DataPath {
    uncached_fraction: f64,
    sample_bytes: f64,
    disk_throughput: f64,
    prep_rate: f64,
}

impl RunPlan<'_> {
    fn stage_times(&self, per_gpu_batch: u64) -> Result<StageTimes> {
        let batch = per_gpu_batch as f64;
        let forward = duration_from_secs(batch * self.forward_per_sample)?;
        let backward = duration_from_secs(batch * self.backward_per_sample)?;
        let compute = forward + backward;

        let exposed_ic = self.comm_interconnect.saturating_sub(backward);
        let (interconnect, network) = if self.multi_node {
            let exposed = self.comm_total.saturating_sub(backward);
            let ic = exposed_ic.min(exposed);
            (ic, exposed - ic)
        } else {
            (exposed_ic, Duration::ZERO)
        };
        let gpu_stage = compute + interconnect + network;

        let (fetch, prep) = match &self.data {
            None => (Duration::ZERO, Duration::ZERO),
            Some(d) => {
                let node_samples = batch * f64::from(self.gpus_per_node);
                let fetch =
                    duration_from_secs(d.uncached_fraction * node_samples * d.sample_bytes / d.disk_throughput)?;
                let prep = duration_from_secs(node_samples / d.prep_rate)?;
                let prep_excess = prep.saturating_sub(gpu_stage);
                let data_excess = (fetch + prep).saturating_sub(gpu_stage);
                (data_excess - prep_excess, prep_excess)
            }
        };
        Ok(StageTimes {
            fetch,
            prep,
            compute,
            interconnect,
            network,
        })
    }
}

fn plan<'a>(
    cluster: &ClusterConfig,
    model: &'a ModelDescriptor,
    data: &DataConfig,
    flags: RunFlags,
) -> Result<RunPlan<'a>> {
    let gpus_per_node = cluster.gpus_per_node_used;
    let multi_node = cluster.instance_count() > 1;
    let workers = cluster.total_gpus();
    let mode = cluster.comm_mode;
    let instances = || cluster.nodes.iter().map(|n| &n.instance);

    let mut ic_link = None;
    if gpus_per_node > 1 {
        let mut bandwidth = f64::INFINITY;
        let mut latency: f64 = 0.0;
        for inst in instances() {
            bandwidth = bandwidth.min(effective_per_gpu_bandwidth(inst, gpus_per_node)?);
            latency = latency.max(inst.interconnect.per_link_latency);
        }
        ic_link = Some((latency, bandwidth));
    }
    let comm_interconnect = match ic_link {
        Some((latency, bandwidth)) => {
            duration_from_secs(model_comm_time(model, latency, bandwidth, gpus_per_node, mode)?)?
        }
        None => Duration::ZERO,
    };
    let comm_total = if multi_node {
        let (mut latency, mut bandwidth) = ic_link.unwrap_or((0.0, f64::INFINITY));
        for inst in instances() {
            bandwidth = bandwidth.min(inst.network_bandwidth);
            latency = latency.max(inst.network_latency);
        }
        duration_from_secs(model_comm_time(model, latency, bandwidth, workers, mode)?)?
    } else {
        comm_interconnect
    };

    let data_path = if flags.synthetic_data {
        None
    } else {
        let cached = if flags.cold_cache { 0.0 } else { data.cached_fraction };
        Some(DataPath {
            uncached_fraction: 1.0 - cached,
            sample_bytes: model.sample_bytes() as f64,
            disk_throughput: instances().map(|i| i.disk_throughput).fold(f64::INFINITY, f64::min),
            prep_rate: instances()
                .map(|i| i.cpu_prep_throughput * f64::from(i.vcpus))
                .fold(f64::INFINITY, f64::min),
        })
    };

    let (forward_per_sample, backward_per_sample) = model.compute_per_sample();
    Ok(RunPlan {
        model,
        workers,
        gpus_per_node,
        forward_per_sample,
        backward_per_sample,
        comm_interconnect,
        comm_total,
        multi_node,
        data: data_path,
    })
}

/// Simulates one epoch of data-parallel training.
pub fn simulate_epoch(
    cluster: &ClusterConfig,
    model: &ModelDescriptor,
    data: &DataConfig,
    flags: RunFlags,
) -> Result<EpochTiming> {
    cluster.validate()?;
    flags.validate()?;
    data.validate(cluster.total_gpus())?;

    if flags.single_gpu_baseline {
        let workers = u64::from(cluster.total_gpus());
        let baseline = ClusterConfig {
            nodes: vec![NodeGroup {
                instance: cluster.nodes[0].instance.clone(),
                count: 1,
            }],
            gpus_per_node_used: 1,
            topology: Topology::SingleNode,
            comm_mode: cluster.comm_mode,
        };
        let share = DataConfig {
            total_samples: data.total_samples.div_ceil(workers),
            ..*data
        };
        return run(&baseline, model, &share, flags);
    }
    run(cluster, model, data, flags)
}

fn run(cluster: &ClusterConfig, model: &ModelDescriptor, data: &DataConfig, flags: RunFlags) -> Result<EpochTiming> {
    let plan = plan(cluster, model, data, flags)?;
    let workers = u64::from(plan.workers);
    let batch = u64::from(data.per_gpu_batch_size);
    let global = batch * workers;
    let full = data.total_samples / global;
    let remainder = data.total_samples % global;

    let mut timing = EpochTiming::default();
    timing.add_iterations(&plan.stage_times(batch)?, full)?;
    if remainder > 0 {
        // the slowest GPU of the final iteration gets the rounded-up share
        let last = plan.stage_times(remainder.div_ceil(workers))?;
        timing.add_iterations(&last, 1)?;
    }
    log::trace!("simulated {} on {} GPUs: {:?}", plan.model.name(), plan.workers, timing);
    Ok(timing)
}

/// Wall-clock time of `epochs` consecutive epochs with unchanged flags.
pub fn simulate_training(
    cluster: &ClusterConfig,
    model: &ModelDescriptor,
    data: &DataConfig,
    flags: RunFlags,
    epochs: u32,
) -> Result<Duration> {
    let epoch = simulate_epoch(cluster, model, data, flags)?;
    let mut total = Duration::ZERO;
    for _ in 0..epochs {
        total = total
            .checked_add(epoch.total)
            .ok_or_else(|| Error::domain("training time overflow"))?;
    }
    Ok(total)
}
