//! Brute-force recommendation oracle shared by the CLI tests.

use stallsim::catalog::{Catalog, InterconnectKind};
use stallsim::dnnmodel::{sync_layer_count, total_gradient_bytes, ModelDescriptor};
use stallsim::simcore::{simulate_epoch, ClusterConfig, DataConfig, RunFlags};
use stallsim::units::secs;

fn e2s<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

pub struct OracleCandidate {
    pub index: usize,
    pub count: u32,
    pub time: f64,
    pub cost: f64,
}

/// Enumerates every (type, count) pair straight from the scaling formula.
pub fn brute_force(
    cat: &Catalog,
    model: &ModelDescriptor,
    data: &DataConfig,
    epochs: u32,
    n_max: u32,
) -> Result<Vec<OracleCandidate>, String> {
    let mut all = Vec::new();
    let batch = u64::from(data.per_gpu_batch_size);
    for (index, inst) in cat.instances().iter().enumerate() {
        let g = inst.gpu_count;
        if batch * u64::from(g) > data.total_samples {
            continue;
        }
        let single = ClusterConfig::single_node(inst.clone(), g);
        let t1 = secs(
            simulate_epoch(&single, model, data, RunFlags::REAL_DATA)
                .map_err(e2s)?
                .total,
        );
        let rounds = data.total_samples.div_ceil(batch * 2 * u64::from(g)) as f64;
        let (lat, bw) = if g > 1 {
            let ic = &inst.interconnect;
            let per_gpu = match ic.kind {
                InterconnectKind::SharedBus => ic.aggregate_bandwidth / f64::from(g),
                _ => ic.aggregate_bandwidth,
            };
            (
                inst.network_latency.max(ic.per_link_latency),
                inst.network_bandwidth.min(per_gpu),
            )
        } else {
            (inst.network_latency, inst.network_bandwidth)
        };
        let tau = rounds * f64::from(sync_layer_count(model)) * lat;
        let grad = rounds * total_gradient_bytes(model) as f64;
        for n in 1..=n_max {
            if batch * u64::from(g) * u64::from(n) > data.total_samples {
                break;
            }
            let nf = f64::from(n);
            let epoch = t1 / nf + (tau + 2.0 * grad / (nf * bw)) * (nf - 1.0);
            let time = f64::from(epochs) * epoch;
            all.push(OracleCandidate {
                index,
                count: n,
                time,
                cost: time / 3600.0 * (inst.price_per_hour * nf),
            });
        }
    }
    Ok(all)
}

pub fn oracle_pick(all: &[OracleCandidate], budget: f64) -> Option<(usize, u32, bool)> {
    let mut feasible: Vec<&OracleCandidate> = all.iter().filter(|c| c.time < budget).collect();
    if !feasible.is_empty() {
        feasible.sort_by(|a, b| {
            a.cost
                .partial_cmp(&b.cost)
                .unwrap()
                .then(a.count.cmp(&b.count))
                .then(a.index.cmp(&b.index))
        });
        return Some((feasible[0].index, feasible[0].count, true));
    }
    let mut rest: Vec<&OracleCandidate> = all.iter().collect();
    rest.sort_by(|a, b| {
        a.time
            .partial_cmp(&b.time)
            .unwrap()
            .then(a.cost.partial_cmp(&b.cost).unwrap())
            .then(a.count.cmp(&b.count))
            .then(a.index.cmp(&b.index))
    });
    rest.first().map(|c| (c.index, c.count, false))
}
