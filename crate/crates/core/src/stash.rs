//! Stall attribution by differencing five simulated runs.
//!
//! | run                         | GPUs         | data                 |
//! |-----------------------------|--------------|----------------------|
//! | `single_gpu_synthetic`      | 1            | synthetic, 1/k share |
//! | `single_instance_synthetic` | all k        | synthetic            |
//! | `cold_cache`                | all k        | real, page cache cold|
//! | `warm_cache`                | all k        | real, fully cached   |
//! | `multi_node_synthetic`      | k over nodes | synthetic            |
//!
//! Interconnect stall is the extra time of the all-GPU run over the single
//! GPU run doing the same per-GPU work. Prep stall is warm-cache minus
//! synthetic, fetch stall is cold-cache minus warm-cache, and network stall is
//! the multi-node run minus the single-instance run.

use std::io::Write;
use std::time::Duration;

use serde::Serialize;

use crate::catalog::InstanceSpec;
use crate::dnnmodel::{total_gradient_bytes, ModelDescriptor};
use crate::simcore::{simulate_epoch, ClusterConfig, CommMode, DataConfig, EpochTiming, RunFlags};
use crate::units::{secs, serde_opt_secs, serde_opt_signed_secs, serde_secs, signed_secs};
use crate::{Error, Result};

/// How the multi-node run spreads the instance's GPUs.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiNodeSplit {
    /// Instance type of the nodes; `None` reuses the profiled instance.
    pub instance: Option<InstanceSpec>,
    pub nodes: u32,
    pub gpus_per_node: u32,
}

impl MultiNodeSplit {
    /// Two nodes with half the GPUs each.
    pub fn halves(inst: &InstanceSpec) -> Result<Self> {
        if inst.gpu_count < 2 || !inst.gpu_count.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "{} has {} GPUs and cannot be split into two equal nodes",
                inst.name, inst.gpu_count
            )));
        }
        Ok(MultiNodeSplit {
            instance: None,
            nodes: 2,
            gpus_per_node: inst.gpu_count / 2,
        })
    }

    /// Parses `NODESxGPUS`, e.g. `2x4`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("expected NODESxGPUS such as 2x4, got {s:?}"));
        let (nodes, gpus) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let nodes: u32 = nodes.trim().parse().map_err(|_| bad())?;
        let gpus_per_node: u32 = gpus.trim().parse().map_err(|_| bad())?;
        if nodes < 1 || gpus_per_node < 1 {
            return Err(bad());
        }
        Ok(MultiNodeSplit {
            instance: None,
            nodes,
            gpus_per_node,
        })
    }

    pub fn with_instance(mut self, inst: InstanceSpec) -> Self {
        self.instance = Some(inst);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct StashRuns {
    pub single_gpu_synthetic: EpochTiming,
    pub single_instance_synthetic: EpochTiming,
    pub cold_cache: EpochTiming,
    pub warm_cache: EpochTiming,
    pub multi_node_synthetic: Option<EpochTiming>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StallReport {
    pub instance: String,
    pub model: String,
    pub per_gpu_batch_size: u32,
    pub total_samples: u64,
    #[serde(rename = "single_gpu_time_s", with = "serde_secs")]
    pub single_gpu_time: Duration,
    #[serde(rename = "single_instance_time_s", with = "serde_secs")]
    pub single_instance_time: Duration,
    #[serde(rename = "cold_cache_time_s", with = "serde_secs")]
    pub cold_cache_time: Duration,
    #[serde(rename = "warm_cache_time_s", with = "serde_secs")]
    pub warm_cache_time: Duration,
    #[serde(rename = "multi_node_time_s", with = "serde_opt_secs")]
    pub multi_node_time: Option<Duration>,
    #[serde(rename = "interconnect_stall_s", with = "serde_secs")]
    pub interconnect_stall: Duration,
    /// Signed nanoseconds: a multi-node run can beat a contended single node.
    #[serde(rename = "network_stall_s", with = "serde_opt_signed_secs")]
    pub network_stall_ns: Option<i128>,
    #[serde(rename = "prep_stall_s", with = "serde_secs")]
    pub prep_stall: Duration,
    #[serde(rename = "fetch_stall_s", with = "serde_secs")]
    pub fetch_stall: Duration,
    pub interconnect_stall_pct: f64,
    pub network_stall_pct: Option<f64>,
    /// Cost of one warm-cache epoch on the profiled instance.
    pub epoch_cost_usd: f64,
    pub runs: StashRuns,
}

/// Interconnect stall as a percentage of the single-GPU time.
pub fn interconnect_stall_pct(stall: Duration, single_gpu_time: Duration) -> f64 {
    stall.as_nanos() as f64 / single_gpu_time.as_nanos() as f64 * 100.0
}

/// Network stall as a percentage of the single-instance time.
pub fn network_stall_pct(stall_ns: i128, single_instance_time: Duration) -> f64 {
    stall_ns as f64 / single_instance_time.as_nanos() as f64 * 100.0
}

fn difference(later: Duration, earlier: Duration, what: &str) -> Result<Duration> {
    later
        .checked_sub(earlier)
        .ok_or_else(|| Error::domain(format!("{what} came out negative")))
}

impl StallReport {
    /// Applies the differencing identities to five (or four) raw runs.
    pub fn from_runs(
        instance: &str,
        model: &str,
        data: &DataConfig,
        runs: StashRuns,
        price_per_hour: f64,
    ) -> Result<Self> {
        let t1 = runs.single_gpu_synthetic.total;
        let t2 = runs.single_instance_synthetic.total;
        let t3 = runs.cold_cache.total;
        let t4 = runs.warm_cache.total;
        let t5 = runs.multi_node_synthetic.map(|r| r.total);
        if t1.is_zero() || t2.is_zero() {
            return Err(Error::domain("baseline epoch time is zero; the model has no compute"));
        }

        let interconnect_stall = difference(t2, t1, "interconnect stall")?;
        let prep_stall = difference(t4, t2, "prep stall")?;
        let fetch_stall = difference(t3, t4, "fetch stall")?;
        let network_stall_ns = t5.map(|t5| t5.as_nanos() as i128 - t2.as_nanos() as i128);

        Ok(StallReport {
            instance: instance.to_owned(),
            model: model.to_owned(),
            per_gpu_batch_size: data.per_gpu_batch_size,
            total_samples: data.total_samples,
            single_gpu_time: t1,
            single_instance_time: t2,
            cold_cache_time: t3,
            warm_cache_time: t4,
            multi_node_time: t5,
            interconnect_stall,
            network_stall_ns,
            prep_stall,
            fetch_stall,
            interconnect_stall_pct: interconnect_stall_pct(interconnect_stall, t1),
            network_stall_pct: network_stall_ns.map(|ns| network_stall_pct(ns, t2)),
            epoch_cost_usd: secs(t4) / 3600.0 * price_per_hour,
            runs,
        })
    }

    pub fn network_stall_secs(&self) -> Option<f64> {
        self.network_stall_ns.map(signed_secs)
    }
}

/// Coarse per-GPU memory estimate: four copies of the model bytes (weights,
/// gradients, optimizer state, slack) plus one batch of input samples.
pub fn memory_required(model: &ModelDescriptor, per_gpu_batch: u32) -> u64 {
    4 * total_gradient_bytes(model) + u64::from(per_gpu_batch) * model.sample_bytes()
}

pub fn check_memory(inst: &InstanceSpec, model: &ModelDescriptor, per_gpu_batch: u32) -> Result<()> {
    let required = memory_required(model, per_gpu_batch);
    let available = inst.gpu_memory_per_gpu();
    if required > available {
        return Err(Error::MemoryInfeasible {
            instance: inst.name.clone(),
            batch: per_gpu_batch,
            required,
            available,
        });
    }
    Ok(())
}

pub fn run_stash(
    inst: &InstanceSpec,
    model: &ModelDescriptor,
    data: &DataConfig,
    multi_node: Option<&MultiNodeSplit>,
) -> Result<StallReport> {
    run_stash_with_mode(inst, model, data, multi_node, CommMode::default())
}

pub fn run_stash_with_mode(
    inst: &InstanceSpec,
    model: &ModelDescriptor,
    data: &DataConfig,
    multi_node: Option<&MultiNodeSplit>,
    mode: CommMode,
) -> Result<StallReport> {
    inst.validate()?;
    let gpus = inst.gpu_count;
    if !data.total_samples.is_multiple_of(u64::from(gpus)) {
        return Err(Error::Config(format!(
            "{} samples do not split evenly over {gpus} GPUs, so the single-GPU and \
             all-GPU runs would process different per-GPU sample counts",
            data.total_samples
        )));
    }
    let multi_cluster = match multi_node {
        None => None,
        Some(split) => {
            if split.nodes * split.gpus_per_node != gpus {
                return Err(Error::Config(format!(
                    "multi-node split {}x{} uses {} GPUs but {} has {gpus}",
                    split.nodes,
                    split.gpus_per_node,
                    split.nodes * split.gpus_per_node,
                    inst.name
                )));
            }
            if split.nodes < 2 {
                return Err(Error::Config("the multi-node run needs at least two nodes".into()));
            }
            let node = split.instance.clone().unwrap_or_else(|| inst.clone());
            Some(ClusterConfig::ring(node, split.nodes, split.gpus_per_node).with_comm_mode(mode))
        }
    };

    let single = ClusterConfig::single_node(inst.clone(), gpus).with_comm_mode(mode);
    let warm = DataConfig {
        cached_fraction: 1.0,
        ..*data
    };
    let runs = StashRuns {
        single_gpu_synthetic: simulate_epoch(&single, model, data, RunFlags::SINGLE_GPU_BASELINE)?,
        single_instance_synthetic: simulate_epoch(&single, model, data, RunFlags::SYNTHETIC)?,
        cold_cache: simulate_epoch(&single, model, data, RunFlags::COLD_CACHE)?,
        warm_cache: simulate_epoch(&single, model, &warm, RunFlags::REAL_DATA)?,
        multi_node_synthetic: multi_cluster
            .map(|c| simulate_epoch(&c, model, data, RunFlags::SYNTHETIC))
            .transpose()?,
    };
    StallReport::from_runs(&inst.name, model.name(), data, runs, inst.price_per_hour)
}

#[derive(Serialize)]
struct CsvRow<'a> {
    instance: &'a str,
    model: &'a str,
    batch: u32,
    t1: f64,
    t2: f64,
    t3: f64,
    t4: f64,
    t5: Option<f64>,
    ic_stall_s: f64,
    nw_stall_s: Option<f64>,
    prep_s: f64,
    fetch_s: f64,
    ic_pct: f64,
    nw_pct: Option<f64>,
    cost_usd: f64,
}

/// Writes one CSV row per report under a fixed header.
pub fn write_csv<W: Write>(reports: &[StallReport], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(CsvRow {
            instance: &r.instance,
            model: &r.model,
            batch: r.per_gpu_batch_size,
            t1: secs(r.single_gpu_time),
            t2: secs(r.single_instance_time),
            t3: secs(r.cold_cache_time),
            t4: secs(r.warm_cache_time),
            t5: r.multi_node_time.map(secs),
            ic_stall_s: secs(r.interconnect_stall),
            nw_stall_s: r.network_stall_secs(),
            prep_s: secs(r.prep_stall),
            fetch_s: secs(r.fetch_stall),
            ic_pct: r.interconnect_stall_pct,
            nw_pct: r.network_stall_pct,
            cost_usd: r.epoch_cost_usd,
        })
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}
