use std::io::{self, IsTerminal, Write};
use std::num::NonZeroU32;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use stallsim::advisor::{self, PredictionMode, RecommendOptions};
use stallsim::catalog::{load_catalog, Catalog, InstanceSpec};
use stallsim::dnnmodel::{preset, preset_info, ModelDescriptor};
use stallsim::simcore::{simulate_epoch, simulate_training, ClusterConfig, CommMode, DataConfig, RunFlags};
use stallsim::stash::{self, MultiNodeSplit};

mod render;

use render::Format;

#[derive(Parser)]
#[command(
    name = "stallsim",
    version,
    about = "Simulate data-parallel training stalls on cloud GPU instances"
)]
struct Cli {
    /// Instance catalog (JSON). Defaults to the built-in AWS P-family catalog.
    #[arg(long, global = true, env = "STALLSIM_CATALOG")]
    catalog: Option<PathBuf>,

    /// Output format. Defaults to pretty on a terminal and json otherwise.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,

    /// Worker threads for sweeps and recommendations.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Catalog operations.
    Catalog {
        #[command(subcommand)]
        cmd: CatalogCmd,
    },
    /// Simulate training on one cluster configuration.
    Simulate(SimulateArgs),
    /// Attribute stalls on one instance type by differencing five runs.
    Stash(StashArgs),
    /// Sweep the instance count with the closed-form scaling model.
    Scale(ScaleArgs),
    /// Cheapest configuration that finishes training within a time budget.
    Recommend(RecommendArgs),
    /// Built-in model presets.
    Presets {
        #[command(subcommand)]
        cmd: PresetsCmd,
    },
}

#[derive(Subcommand)]
enum CatalogCmd {
    /// Check a catalog file; exits 2 with the offending field on failure.
    Validate { path: Option<PathBuf> },
}

#[derive(Subcommand)]
enum PresetsCmd {
    List,
}

#[derive(Args)]
struct Workload {
    /// Per-GPU batch size.
    #[arg(long, default_value_t = 32)]
    batch: u32,
    /// Dataset size. Defaults to the preset's dataset.
    #[arg(long)]
    samples: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum DataSource {
    /// Real data with the configured cached fraction.
    Real,
    /// Synthetic batches already in GPU memory.
    Synthetic,
    /// Real data, everything read from disk.
    Cold,
}

#[derive(Clone, Copy, ValueEnum)]
enum CommArg {
    PerLayer,
    Ring,
}

impl From<CommArg> for CommMode {
    fn from(c: CommArg) -> Self {
        match c {
            CommArg::PerLayer => CommMode::PerLayer,
            CommArg::Ring => CommMode::Ring,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    instance: String,
    /// Preset name or path to a model JSON file.
    model: String,
    #[command(flatten)]
    workload: Workload,
    /// Number of instances in the ring.
    #[arg(long, default_value_t = 1)]
    instances: u32,
    /// GPUs used per instance. Defaults to all of them.
    #[arg(long)]
    gpus: Option<u32>,
    #[arg(long, value_enum, default_value = "real")]
    data: DataSource,
    #[arg(long, default_value_t = 0.0)]
    cached_fraction: f64,
    #[arg(long, default_value_t = 1)]
    epochs: u32,
    #[arg(long, value_enum, default_value = "per-layer")]
    comm: CommArg,
}

#[derive(Args)]
struct StashArgs {
    instance: String,
    model: String,
    #[command(flatten)]
    workload: Workload,
    /// Split the instance's GPUs over nodes for the network run, e.g. 2x4.
    /// Defaults to two halves when the GPU count is even.
    #[arg(long, conflicts_with = "no_multi_node")]
    multi_node: Option<String>,
    /// Skip the multi-node run.
    #[arg(long)]
    no_multi_node: bool,
    /// Instance type of the multi-node run's nodes.
    #[arg(long, requires = "multi_node")]
    multi_node_instance: Option<String>,
    #[arg(long, value_enum, default_value = "per-layer")]
    comm: CommArg,
}

#[derive(Args)]
struct ScaleArgs {
    model: String,
    instance: String,
    #[command(flatten)]
    workload: Workload,
    /// Instance counts, e.g. 1..8 (inclusive).
    #[arg(long = "n", default_value = "1..8", value_parser = parse_range)]
    n: RangeInclusive<u32>,
    #[arg(long, default_value_t = NonZeroU32::MIN)]
    epochs: NonZeroU32,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Analytic,
    Simulated,
}

#[derive(Args)]
struct RecommendArgs {
    model: String,
    #[command(flatten)]
    workload: Workload,
    #[arg(long)]
    epochs: NonZeroU32,
    /// Wall-clock budget for the whole training run, seconds.
    #[arg(long)]
    budget: f64,
    #[arg(long, default_value_t = 8)]
    n_max: u32,
    #[arg(long, value_enum, default_value = "analytic")]
    mode: ModeArg,
}

fn parse_range(s: &str) -> Result<RangeInclusive<u32>, String> {
    let bad = || format!("expected a count or a range such as 1..8, got {s:?}");
    let (lo, hi) = match s.split_once("..") {
        Some((lo, hi)) => (lo, hi.strip_prefix('=').unwrap_or(hi)),
        None => (s, s),
    };
    let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
    let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
    Ok(lo..=hi)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if let Some(io) = err.downcast_ref::<io::Error>() {
        if io.kind() == io::ErrorKind::BrokenPipe {
            return 0;
        }
        return 1;
    }
    match err.downcast_ref::<stallsim::Error>() {
        Some(stallsim::Error::MemoryInfeasible { .. }) => 3,
        _ => 2,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let fmt = |default_machine: Format| {
        cli.format.unwrap_or(if io::stdout().is_terminal() {
            Format::Pretty
        } else {
            default_machine
        })
    };
    // rendered in full first so a closed pipe surfaces as a plain io::Error
    let mut out = Vec::new();

    match &cli.command {
        Command::Catalog {
            cmd: CatalogCmd::Validate { path },
        } => {
            let (cat, source) = match path.as_ref().or(cli.catalog.as_ref()) {
                Some(p) => (load_catalog(p)?, p.display().to_string()),
                None => (Catalog::default_aws(), "built-in catalog".to_owned()),
            };
            render::catalog_ok(&mut out, fmt(Format::Json), &source, &cat)?;
        }
        Command::Presets { cmd: PresetsCmd::List } => render::presets(&mut out, fmt(Format::Json))?,
        Command::Simulate(a) => {
            let cat = open_catalog(cli.catalog.as_deref())?;
            let inst = instance(&cat, &a.instance)?;
            let model = load_model(&a.model)?;
            let gpus = a.gpus.unwrap_or(inst.gpu_count);
            stash::check_memory(inst, &model, a.workload.batch)?;
            let data = DataConfig::new(samples(&a.workload, &a.model, 1)?, a.workload.batch)
                .with_cached_fraction(a.cached_fraction);
            let flags = match a.data {
                DataSource::Real => RunFlags::REAL_DATA,
                DataSource::Synthetic => RunFlags::SYNTHETIC,
                DataSource::Cold => RunFlags::COLD_CACHE,
            };
            let cluster = ClusterConfig::ring(inst.clone(), a.instances, gpus).with_comm_mode(a.comm.into());
            let epoch = simulate_epoch(&cluster, &model, &data, flags)?;
            let training = simulate_training(&cluster, &model, &data, flags, a.epochs)?;
            let sim = render::Simulation {
                instance: &inst.name,
                model: model.name(),
                instances: a.instances,
                gpus_per_instance: gpus,
                per_gpu_batch_size: data.per_gpu_batch_size,
                total_samples: data.total_samples,
                epochs: a.epochs,
                training_time_s: stallsim::units::secs(training),
                cost_usd: stallsim::units::secs(training) / 3600.0 * cluster.hourly_price(),
                epoch,
            };
            render::simulation(&mut out, fmt(Format::Json), &sim)?;
        }
        Command::Stash(a) => {
            let cat = open_catalog(cli.catalog.as_deref())?;
            let inst = instance(&cat, &a.instance)?;
            let model = load_model(&a.model)?;
            stash::check_memory(inst, &model, a.workload.batch)?;
            let split = match &a.multi_node {
                None if a.no_multi_node => None,
                None => MultiNodeSplit::halves(inst).ok(),
                Some(s) => {
                    let mut split = MultiNodeSplit::parse(s)?;
                    if let Some(name) = &a.multi_node_instance {
                        let node = instance(&cat, name)?;
                        stash::check_memory(node, &model, a.workload.batch)?;
                        split = split.with_instance(node.clone());
                    }
                    Some(split)
                }
            };
            let data = DataConfig::new(samples(&a.workload, &a.model, inst.gpu_count)?, a.workload.batch);
            let report = stash::run_stash_with_mode(inst, &model, &data, split.as_ref(), a.comm.into())?;
            render::stash_report(&mut out, fmt(Format::Json), &report)?;
        }
        Command::Scale(a) => {
            let cat = open_catalog(cli.catalog.as_deref())?;
            let inst = instance(&cat, &a.instance)?;
            let model = load_model(&a.model)?;
            stash::check_memory(inst, &model, a.workload.batch)?;
            let data = DataConfig::new(samples(&a.workload, &a.model, 1)?, a.workload.batch);
            let rows = advisor::sweep(inst, &model, &data, a.n.clone(), a.epochs)?;
            render::sweep(&mut out, fmt(Format::Csv), &rows)?;
        }
        Command::Recommend(a) => {
            let cat = open_catalog(cli.catalog.as_deref())?;
            let model = load_model(&a.model)?;
            let data = DataConfig::new(samples(&a.workload, &a.model, 1)?, a.workload.batch);
            let opts = RecommendOptions {
                mode: match a.mode {
                    ModeArg::Analytic => PredictionMode::Analytic,
                    ModeArg::Simulated => PredictionMode::Simulated,
                },
                ..RecommendOptions::default()
            };
            let rec = advisor::recommend_with(&cat, &model, &data, a.epochs, a.budget, a.n_max, &opts)?;
            if !rec.feasible {
                eprintln!(
                    "warning: no configuration finishes within {} s; showing the fastest ({:.1} s)",
                    a.budget, rec.predicted_training_time_s
                );
            }
            render::recommendation(&mut out, fmt(Format::Json), &rec)?;
        }
    }
    out.flush()?;
    let mut stdout = io::stdout().lock();
    stdout.write_all(&out)?;
    stdout.flush()?;
    Ok(())
}

fn open_catalog(path: Option<&Path>) -> anyhow::Result<Catalog> {
    Ok(match path {
        Some(p) => load_catalog(p)?,
        None => Catalog::default_aws(),
    })
}

fn instance<'a>(cat: &'a Catalog, name: &str) -> anyhow::Result<&'a InstanceSpec> {
    cat.get(name).ok_or_else(|| {
        let known: Vec<_> = cat.instances().iter().map(|i| i.name.as_str()).collect();
        anyhow::Error::new(stallsim::Error::Config(format!(
            "unknown instance {name:?}; the catalog has {}",
            known.join(", ")
        )))
    })
}

/// A preset name, or a path to a model JSON file.
fn load_model(spec: &str) -> anyhow::Result<ModelDescriptor> {
    if let Some(m) = preset(spec) {
        return Ok(m);
    }
    let path = Path::new(spec);
    if path.extension().is_some() || spec.contains(std::path::MAIN_SEPARATOR) || path.exists() {
        return Ok(ModelDescriptor::load(path)?);
    }
    Err(stallsim::Error::Config(format!(
        "{spec:?} is neither a preset (see `stallsim presets list`) nor a model file"
    ))
    .into())
}

/// Dataset size from `--samples`, or the preset's dataset rounded down to a
/// multiple of `multiple`.
fn samples(w: &Workload, model: &str, multiple: u32) -> anyhow::Result<u64> {
    if let Some(s) = w.samples {
        return Ok(s);
    }
    let Some(info) = preset_info(model) else {
        bail!(stallsim::Error::Config(format!(
            "--samples is required for model file {model:?}"
        )));
    };
    let m = u64::from(multiple.max(1));
    Ok(info.dataset_samples / m * m)
}
