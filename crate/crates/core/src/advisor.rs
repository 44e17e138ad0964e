//! Cost model and budget-constrained cluster recommendation.
//!
//! Candidates are homogeneous clusters: one instance type, 1 to `n_max`
//! instances, every GPU in use. Single-instance epoch time comes from the
//! simulator. Multi-instance time comes from the closed-form scaling model by
//! default, or from a full ring simulation with [`PredictionMode::Simulated`].

use std::io::Write;
use std::num::NonZeroU32;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::{network_stall_n, scaling_time, ScalingParams};
use crate::catalog::{effective_per_gpu_bandwidth, Catalog, InstanceSpec};
use crate::dnnmodel::{sync_layer_count, total_gradient_bytes, ModelDescriptor};
use crate::simcore::{simulate_epoch, ClusterConfig, CommMode, DataConfig, RunFlags};
use crate::units::secs;
use crate::{Error, Result};

pub const SECONDS_PER_HOUR: f64 = 3600.0;

/// Largest instance count a sweep accepts.
pub const MAX_SWEEP_INSTANCES: u32 = 64;

/// Dollar cost of `epochs` epochs of `epoch_time` seconds, billed per second.
pub fn training_cost(config: &ClusterConfig, epoch_time: f64, epochs: NonZeroU32) -> f64 {
    cost_of(f64::from(epochs.get()) * epoch_time, config.hourly_price())
}

fn cost_of(training_time: f64, hourly_price: f64) -> f64 {
    training_time / SECONDS_PER_HOUR * hourly_price
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictionMode {
    /// Closed-form scaling model for more than one instance.
    #[default]
    Analytic,
    /// Simulate every multi-instance ring directly.
    Simulated,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RecommendOptions {
    pub mode: PredictionMode,
    pub comm_mode: CommMode,
    pub flags: RunFlags,
}

/// Derives scaling-model inputs for `inst` from a single-instance simulation.
///
/// Latency and gradient volume are per-epoch totals: the per-iteration values
/// multiplied by the number of synchronization rounds a two-instance cluster
/// performs in one epoch. The link is the slower of the network and the
/// intra-node interconnect.
pub fn scaling_params_for(
    inst: &InstanceSpec,
    model: &ModelDescriptor,
    data: &DataConfig,
    flags: RunFlags,
    comm_mode: CommMode,
) -> Result<ScalingParams> {
    let single = ClusterConfig::single_node(inst.clone(), inst.gpu_count).with_comm_mode(comm_mode);
    let t1 = secs(simulate_epoch(&single, model, data, flags)?.total);

    let global = u64::from(data.per_gpu_batch_size) * 2 * u64::from(inst.gpu_count);
    let rounds = data.total_samples.div_ceil(global) as f64;
    let (mut latency, mut bandwidth) = (inst.network_latency, inst.network_bandwidth);
    if inst.gpu_count > 1 {
        latency = latency.max(inst.interconnect.per_link_latency);
        bandwidth = bandwidth.min(effective_per_gpu_bandwidth(inst, inst.gpu_count)?);
    }
    ScalingParams::new(
        t1,
        rounds * f64::from(sync_layer_count(model)) * latency,
        bandwidth,
        rounds * total_gradient_bytes(model) as f64,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Recommendation {
    pub instance: String,
    pub instance_count: u32,
    pub config: ClusterConfig,
    pub predicted_epoch_time_s: f64,
    pub predicted_training_time_s: f64,
    pub predicted_cost_usd: f64,
    pub epochs: u32,
    pub budget_s: f64,
    pub feasible: bool,
    pub candidates_considered: usize,
}

/// One evaluated (instance type, count) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate {
    /// Position of the instance type in the catalog.
    pub catalog_index: usize,
    pub count: u32,
    pub epoch_time: f64,
    pub training_time: f64,
    pub cost: f64,
}

/// Predicted epoch times for every valid candidate, in catalog order and then
/// by count. Counts whose global batch exceeds the dataset are skipped.
pub fn enumerate_candidates(
    cat: &Catalog,
    model: &ModelDescriptor,
    data: &DataConfig,
    epochs: NonZeroU32,
    n_max: u32,
    opts: &RecommendOptions,
) -> Result<Vec<Candidate>> {
    let per_instance: Vec<Result<Vec<Candidate>>> = cat
        .instances()
        .par_iter()
        .enumerate()
        .map(|(idx, inst)| instance_candidates(idx, inst, model, data, epochs, n_max, opts))
        .collect();
    let mut all = Vec::new();
    for c in per_instance {
        all.extend(c?);
    }
    Ok(all)
}

fn instance_candidates(
    idx: usize,
    inst: &InstanceSpec,
    model: &ModelDescriptor,
    data: &DataConfig,
    epochs: NonZeroU32,
    n_max: u32,
    opts: &RecommendOptions,
) -> Result<Vec<Candidate>> {
    let fits =
        |n: u32| u64::from(data.per_gpu_batch_size) * u64::from(inst.gpu_count) * u64::from(n) <= data.total_samples;
    let mut out = Vec::new();
    if !fits(1) {
        return Ok(out);
    }
    let params = match opts.mode {
        PredictionMode::Analytic => Some(scaling_params_for(inst, model, data, opts.flags, opts.comm_mode)?),
        PredictionMode::Simulated => None,
    };
    for n in (1..=n_max).take_while(|&n| fits(n)) {
        let cluster = ClusterConfig::ring(inst.clone(), n, inst.gpu_count).with_comm_mode(opts.comm_mode);
        let epoch_time = match &params {
            Some(p) => scaling_time(p, n),
            None => secs(simulate_epoch(&cluster, model, data, opts.flags)?.total),
        };
        let training_time = f64::from(epochs.get()) * epoch_time;
        out.push(Candidate {
            catalog_index: idx,
            count: n,
            epoch_time,
            training_time,
            cost: cost_of(training_time, cluster.hourly_price()),
        });
    }
    Ok(out)
}

/// Picks the cheapest candidate under budget, or the fastest if none is.
///
/// Ties among feasible candidates fall to fewer instances, then catalog
/// order. Ties among infeasible ones fall to lower cost first.
pub fn select(candidates: &[Candidate], budget: f64) -> Option<(&Candidate, bool)> {
    let key = |c: &Candidate| (c.count, c.catalog_index);
    let cheapest = candidates
        .iter()
        .filter(|c| c.training_time < budget)
        .min_by(|a, b| a.cost.total_cmp(&b.cost).then(key(a).cmp(&key(b))));
    if let Some(c) = cheapest {
        return Some((c, true));
    }
    candidates
        .iter()
        .min_by(|a, b| {
            a.training_time
                .total_cmp(&b.training_time)
                .then(a.cost.total_cmp(&b.cost))
                .then(key(a).cmp(&key(b)))
        })
        .map(|c| (c, false))
}

pub fn recommend(
    cat: &Catalog,
    model: &ModelDescriptor,
    data: &DataConfig,
    epochs: NonZeroU32,
    budget: f64,
    n_max: u32,
) -> Result<Recommendation> {
    recommend_with(cat, model, data, epochs, budget, n_max, &RecommendOptions::default())
}

pub fn recommend_with(
    cat: &Catalog,
    model: &ModelDescriptor,
    data: &DataConfig,
    epochs: NonZeroU32,
    budget: f64,
    n_max: u32,
    opts: &RecommendOptions,
) -> Result<Recommendation> {
    if cat.is_empty() {
        return Err(Error::validation("instances", "catalog must not be empty"));
    }
    if budget.is_nan() || budget <= 0.0 {
        return Err(Error::domain(format!("budget must be positive, got {budget}")));
    }
    if n_max < 1 {
        return Err(Error::domain("n_max must be at least 1"));
    }
    let candidates = enumerate_candidates(cat, model, data, epochs, n_max, opts)?;
    let (best, feasible) = select(&candidates, budget).ok_or_else(|| {
        Error::Config(format!(
            "no instance type can run a per-GPU batch of {} over {} samples",
            data.per_gpu_batch_size, data.total_samples
        ))
    })?;
    let inst = &cat.instances()[best.catalog_index];
    let config = ClusterConfig::ring(inst.clone(), best.count, inst.gpu_count).with_comm_mode(opts.comm_mode);
    Ok(Recommendation {
        instance: inst.name.clone(),
        instance_count: best.count,
        config,
        predicted_epoch_time_s: best.epoch_time,
        predicted_training_time_s: best.training_time,
        predicted_cost_usd: best.cost,
        epochs: epochs.get(),
        budget_s: budget,
        feasible,
        candidates_considered: candidates.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: u32,
    pub epoch_time_s: f64,
    pub total_time_s: f64,
    pub network_stall_s: f64,
    pub network_stall_pct: f64,
    pub cost_usd: f64,
}

/// Evaluates the scaling model for every count in `n_range`.
pub fn sweep_params(
    params: &ScalingParams,
    hourly_price: f64,
    n_range: RangeInclusive<u32>,
    epochs: NonZeroU32,
) -> Result<Vec<SweepRow>> {
    if n_range.is_empty() || *n_range.start() < 1 || *n_range.end() > MAX_SWEEP_INSTANCES {
        return Err(Error::domain(format!(
            "instance range {}..={} must lie within 1..={MAX_SWEEP_INSTANCES}",
            n_range.start(),
            n_range.end()
        )));
    }
    params.validate()?;
    Ok(n_range
        .map(|n| {
            let epoch_time = scaling_time(params, n);
            let total = f64::from(epochs.get()) * epoch_time;
            let stall = network_stall_n(params, n);
            SweepRow {
                n,
                epoch_time_s: epoch_time,
                total_time_s: total,
                network_stall_s: stall,
                network_stall_pct: stall / params.t1 * 100.0,
                cost_usd: cost_of(total, hourly_price * f64::from(n)),
            }
        })
        .collect())
}

pub fn sweep(
    inst: &InstanceSpec,
    model: &ModelDescriptor,
    data: &DataConfig,
    n_range: RangeInclusive<u32>,
    epochs: NonZeroU32,
) -> Result<Vec<SweepRow>> {
    let params = scaling_params_for(inst, model, data, RunFlags::default(), CommMode::default())?;
    sweep_params(&params, inst.price_per_hour, n_range, epochs)
}

/// Index of the fastest row; the smaller count wins ties.
pub fn sweep_argmin(rows: &[SweepRow]) -> Option<usize> {
    rows.iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| a.epoch_time_s.total_cmp(&b.epoch_time_s))
        .map(|(i, _)| i)
}

/// Writes the sweep as CSV; the fastest row carries `*` in the `best` column.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let best = sweep_argmin(rows);
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    let io = |e: csv::Error| Error::Parse(e.to_string());
    w.write_record([
        "n",
        "epoch_time_s",
        "total_time_s",
        "network_stall_s",
        "network_stall_pct",
        "cost_usd",
        "best",
    ])
    .map_err(io)?;
    for (i, row) in rows.iter().enumerate() {
        let flag = if Some(i) == best { "*" } else { "" };
        w.write_record([
            row.n.to_string(),
            row.epoch_time_s.to_string(),
            row.total_time_s.to_string(),
            row.network_stall_s.to_string(),
            row.network_stall_pct.to_string(),
            row.cost_usd.to_string(),
            flag.to_string(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Parse(e.to_string()))?;
    Ok(())
}
