//! Output formatting. Machine formats carry no timestamps or locale-dependent
//! text, so identical inputs give identical bytes.

use std::io::Write;

use clap::ValueEnum;
use serde::Serialize;

use stallsim::advisor::{self, Recommendation, SweepRow};
use stallsim::catalog::Catalog;
use stallsim::dnnmodel::{preset, sync_layer_count, PRESETS};
use stallsim::simcore::EpochTiming;
use stallsim::stash::{self, StallReport};
use stallsim::units::secs;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Pretty,
}

fn json<W: Write, T: Serialize + ?Sized>(out: &mut W, value: &T) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn csv_rows<W: Write, T: Serialize>(out: &mut W, rows: &[T]) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn catalog_ok<W: Write>(out: &mut W, fmt: Format, source: &str, cat: &Catalog) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Summary<'a> {
        valid: bool,
        source: &'a str,
        instances: Vec<&'a str>,
    }
    let names: Vec<&str> = cat.instances().iter().map(|i| i.name.as_str()).collect();
    match fmt {
        Format::Json => json(
            out,
            &Summary {
                valid: true,
                source,
                instances: names,
            },
        ),
        Format::Csv => {
            writeln!(out, "instance")?;
            for n in names {
                writeln!(out, "{n}")?;
            }
            Ok(())
        }
        Format::Pretty => {
            writeln!(out, "{source}: ok, {} instance types", names.len())?;
            for n in names {
                writeln!(out, "  {n}")?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
struct PresetRow {
    name: &'static str,
    parameters: u64,
    sync_layers: u32,
    dataset: &'static str,
    dataset_samples: u64,
    sample_bytes: u64,
    compute_ms_per_sample: f64,
}

pub fn presets<W: Write>(out: &mut W, fmt: Format) -> anyhow::Result<()> {
    let rows: Vec<PresetRow> = PRESETS
        .iter()
        .map(|p| PresetRow {
            name: p.name,
            parameters: p.parameters,
            sync_layers: sync_layer_count(&preset(p.name).expect("listed presets exist")),
            dataset: p.dataset,
            dataset_samples: p.dataset_samples,
            sample_bytes: p.sample_bytes,
            compute_ms_per_sample: p.compute_ns_per_sample as f64 / 1e6,
        })
        .collect();
    match fmt {
        Format::Json => json(out, &rows),
        Format::Csv => csv_rows(out, &rows),
        Format::Pretty => {
            writeln!(
                out,
                "{:<14} {:>12} {:>7} {:<12} {:>10} {:>10}",
                "name", "parameters", "layers", "dataset", "samples", "ms/sample"
            )?;
            for r in rows {
                writeln!(
                    out,
                    "{:<14} {:>12} {:>7} {:<12} {:>10} {:>10.2}",
                    r.name, r.parameters, r.sync_layers, r.dataset, r.dataset_samples, r.compute_ms_per_sample
                )?;
            }
            Ok(())
        }
    }
}

#[derive(Serialize)]
pub struct Simulation<'a> {
    pub instance: &'a str,
    pub model: &'a str,
    pub instances: u32,
    pub gpus_per_instance: u32,
    pub per_gpu_batch_size: u32,
    pub total_samples: u64,
    pub epochs: u32,
    pub training_time_s: f64,
    pub cost_usd: f64,
    pub epoch: EpochTiming,
}

pub fn simulation<W: Write>(out: &mut W, fmt: Format, s: &Simulation) -> anyhow::Result<()> {
    match fmt {
        Format::Json => json(out, s),
        Format::Csv => {
            #[derive(Serialize)]
            struct Row<'a> {
                instance: &'a str,
                model: &'a str,
                instances: u32,
                gpus_per_instance: u32,
                batch: u32,
                samples: u64,
                epochs: u32,
                epoch_s: f64,
                fetch_s: f64,
                prep_s: f64,
                compute_s: f64,
                ic_exposed_s: f64,
                nw_exposed_s: f64,
                iterations: u64,
                training_time_s: f64,
                cost_usd: f64,
            }
            let e = &s.epoch;
            csv_rows(
                out,
                &[Row {
                    instance: s.instance,
                    model: s.model,
                    instances: s.instances,
                    gpus_per_instance: s.gpus_per_instance,
                    batch: s.per_gpu_batch_size,
                    samples: s.total_samples,
                    epochs: s.epochs,
                    epoch_s: secs(e.total),
                    fetch_s: secs(e.fetch),
                    prep_s: secs(e.prep),
                    compute_s: secs(e.compute),
                    ic_exposed_s: secs(e.comm_interconnect_exposed),
                    nw_exposed_s: secs(e.comm_network_exposed),
                    iterations: e.iterations,
                    training_time_s: s.training_time_s,
                    cost_usd: s.cost_usd,
                }],
            )
        }
        Format::Pretty => {
            let e = &s.epoch;
            writeln!(
                out,
                "{} on {} x {} ({} GPUs each), batch {} per GPU, {} samples",
                s.model, s.instances, s.instance, s.gpus_per_instance, s.per_gpu_batch_size, s.total_samples
            )?;
            writeln!(
                out,
                "  epoch            {:>12.3} s  ({} iterations)",
                secs(e.total),
                e.iterations
            )?;
            writeln!(out, "    fetch          {:>12.3} s", secs(e.fetch))?;
            writeln!(out, "    prep           {:>12.3} s", secs(e.prep))?;
            writeln!(out, "    compute        {:>12.3} s", secs(e.compute))?;
            writeln!(out, "    interconnect   {:>12.3} s", secs(e.comm_interconnect_exposed))?;
            writeln!(out, "    network        {:>12.3} s", secs(e.comm_network_exposed))?;
            writeln!(out, "  {} epochs        {:>12.3} s", s.epochs, s.training_time_s)?;
            writeln!(out, "  cost             {:>12.2} USD", s.cost_usd)?;
            Ok(())
        }
    }
}

pub fn stash_report<W: Write>(out: &mut W, fmt: Format, r: &StallReport) -> anyhow::Result<()> {
    match fmt {
        Format::Json => json(out, r),
        Format::Csv => Ok(stash::write_csv(std::slice::from_ref(r), out)?),
        Format::Pretty => {
            writeln!(
                out,
                "{} on {}, batch {} per GPU, {} samples",
                r.model, r.instance, r.per_gpu_batch_size, r.total_samples
            )?;
            writeln!(out, "  single GPU, synthetic       {:>12.3} s", secs(r.single_gpu_time))?;
            writeln!(
                out,
                "  all GPUs, synthetic         {:>12.3} s",
                secs(r.single_instance_time)
            )?;
            writeln!(out, "  cold cache                  {:>12.3} s", secs(r.cold_cache_time))?;
            writeln!(out, "  warm cache                  {:>12.3} s", secs(r.warm_cache_time))?;
            match r.multi_node_time {
                Some(t) => writeln!(out, "  multi-node, synthetic       {:>12.3} s", secs(t))?,
                None => writeln!(out, "  multi-node, synthetic       {:>12}", "-")?,
            }
            writeln!(
                out,
                "  interconnect stall          {:>12.3} s  {:>6.1} %",
                secs(r.interconnect_stall),
                r.interconnect_stall_pct
            )?;
            match (r.network_stall_secs(), r.network_stall_pct) {
                (Some(s), Some(p)) => writeln!(out, "  network stall               {s:>12.3} s  {p:>6.1} %")?,
                _ => writeln!(out, "  network stall               {:>12}", "-")?,
            }
            writeln!(out, "  prep stall                  {:>12.3} s", secs(r.prep_stall))?;
            writeln!(out, "  fetch stall                 {:>12.3} s", secs(r.fetch_stall))?;
            writeln!(out, "  epoch cost (warm cache)     {:>12.2} USD", r.epoch_cost_usd)?;
            Ok(())
        }
    }
}

const LATENCY_NOTE: &str = "latency is a constant per link; time-varying network congestion is not modelled";

pub fn sweep<W: Write>(out: &mut W, fmt: Format, rows: &[SweepRow]) -> anyhow::Result<()> {
    #[derive(Serialize)]
    struct Sweep<'a> {
        latency_model: &'static str,
        best_n: Option<u32>,
        rows: &'a [SweepRow],
    }
    match fmt {
        Format::Json => json(
            out,
            &Sweep {
                latency_model: LATENCY_NOTE,
                best_n: advisor::sweep_argmin(rows).map(|i| rows[i].n),
                rows,
            },
        ),
        Format::Csv => Ok(advisor::write_sweep_csv(rows, out)?),
        Format::Pretty => {
            let best = advisor::sweep_argmin(rows);
            writeln!(
                out,
                "{:>4} {:>12} {:>14} {:>12} {:>8} {:>10}",
                "n", "epoch s", "total s", "stall s", "stall %", "cost USD"
            )?;
            for (i, r) in rows.iter().enumerate() {
                writeln!(
                    out,
                    "{:>4} {:>12.3} {:>14.3} {:>12.3} {:>8.1} {:>10.2}{}",
                    r.n,
                    r.epoch_time_s,
                    r.total_time_s,
                    r.network_stall_s,
                    r.network_stall_pct,
                    r.cost_usd,
                    if Some(i) == best { " *" } else { "" }
                )?;
            }
            writeln!(out, "note: {LATENCY_NOTE}")?;
            Ok(())
        }
    }
}

pub fn recommendation<W: Write>(out: &mut W, fmt: Format, r: &Recommendation) -> anyhow::Result<()> {
    match fmt {
        Format::Json => json(out, r),
        Format::Csv => {
            #[derive(Serialize)]
            struct Row<'a> {
                instance: &'a str,
                instance_count: u32,
                epoch_time_s: f64,
                training_time_s: f64,
                cost_usd: f64,
                epochs: u32,
                budget_s: f64,
                feasible: bool,
                candidates: usize,
            }
            csv_rows(
                out,
                &[Row {
                    instance: &r.instance,
                    instance_count: r.instance_count,
                    epoch_time_s: r.predicted_epoch_time_s,
                    training_time_s: r.predicted_training_time_s,
                    cost_usd: r.predicted_cost_usd,
                    epochs: r.epochs,
                    budget_s: r.budget_s,
                    feasible: r.feasible,
                    candidates: r.candidates_considered,
                }],
            )
        }
        Format::Pretty => {
            writeln!(
                out,
                "{} x {}{}",
                r.instance_count,
                r.instance,
                if r.feasible { "" } else { "  (over budget)" }
            )?;
            writeln!(out, "  epoch           {:>12.3} s", r.predicted_epoch_time_s)?;
            writeln!(
                out,
                "  {} epochs   {:>12.3} s  (budget {} s)",
                r.epochs, r.predicted_training_time_s, r.budget_s
            )?;
            writeln!(out, "  cost            {:>12.2} USD", r.predicted_cost_usd)?;
            writeln!(out, "  candidates      {:>12}", r.candidates_considered)?;
            Ok(())
        }
    }
}
