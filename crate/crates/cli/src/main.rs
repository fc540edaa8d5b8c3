//! `colora`: command-line front end for continual low-rank adaptation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use colora_core::data::write_dataset;
use colora_core::harness::{self, AdaptResult, Axis};
use colora_core::registry::{load_base, save_base, Registry, TaskMeta};
use colora_core::training::write_progress;
use colora_core::{
    count_params, ArchSpec, DatasetKind, DatasetSpec, Error, GeneratorWeights, RunConfig,
};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_REGISTRY: u8 = 4;

#[derive(Parser, Debug)]
#[command(
    name = "colora",
    version,
    about = "Continual few-shot generator adaptation with low-rank adapters"
)]
struct Cli {
    /// TOML run configuration; defaults to the built-in synthetic benchmark.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides run.seed (run.eval_seed for `eval`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides run.out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the base generator on the source distribution.
    Pretrain {
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Adapt the frozen base to one configured task and store its adapters.
    Adapt(AdaptArgs),
    /// Re-evaluate every task in a registry.
    Eval {
        #[arg(long)]
        registry: PathBuf,
    },
    /// Run one ablation grid.
    Ablate {
        #[arg(long)]
        axis: String,
        #[arg(long)]
        base: PathBuf,
        /// Restrict to these task ids (repeatable); default all tasks.
        #[arg(long = "task")]
        tasks: Vec<String>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Print base and adapter parameter counts as JSON.
    Count {
        /// Architecture preset; defaults to the configured one.
        #[arg(long)]
        arch: Option<String>,
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Write a procedural dataset as binary PPM files.
    GenDataset {
        /// source, palette, shape or texture.
        #[arg(long, default_value = "source")]
        kind: String,
        #[arg(long, default_value_t = 10)]
        count: usize,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long, default_value_t = 180.0)]
        rotation: f64,
        #[arg(long, default_value_t = 4.0)]
        frequency: f64,
    },
}

#[derive(Args, Debug)]
struct AdaptArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long)]
    task: String,
    /// Registry directory; defaults to `<out>/registry`.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, requires = "alpha_conv")]
    alpha_fc: Option<f64>,
    #[arg(long, requires = "alpha_fc")]
    alpha_conv: Option<f64>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        _ if e.is_numerical() => EXIT_NUMERICAL,
        Error::DuplicateTask(_)
        | Error::UnknownTask(_)
        | Error::EmptyRegistry(_)
        | Error::Locked(_)
        | Error::Manifest { .. }
        | Error::Checkpoint { .. }
        | Error::FingerprintMismatch { .. } => EXIT_REGISTRY,
        _ => EXIT_CONFIG,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::synthetic_benchmark("desk"),
    };
    if let Some(out) = &cli.out {
        cfg.run.out = out.clone();
    }
    Ok(cfg)
}

fn require_dir(p: &Path) -> Result<(), Error> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "output directory {} does not exist",
            p.display()
        )))
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Error> {
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn progress_csv(rows: &[colora_core::training::ProgressRow]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_progress(&mut buf, rows).expect("writing to memory");
    buf
}

fn absolute(p: &Path) -> Result<PathBuf, Error> {
    std::fs::canonicalize(p).map_err(|source| Error::Io {
        path: p.to_path_buf(),
        source,
    })
}

fn cmd_pretrain(cli: &Cli, iterations: Option<usize>) -> Result<(), Error> {
    let mut cfg = load_config(cli)?;
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(n) = iterations {
        cfg.pretrain.iterations = n;
    }
    require_dir(&cfg.run.out)?;
    let outcome = harness::pretrain(&cfg)?;
    let path = cfg.run.out.join("base.clrg");
    save_base(&outcome.weights, &path)?;
    write(
        &cfg.run.out.join("pretrain_progress.csv"),
        progress_csv(&outcome.log),
    )?;
    println!("{}\t{}", path.display(), outcome.weights.fingerprint());
    Ok(())
}

fn cmd_adapt(cli: &Cli, a: &AdaptArgs) -> Result<(), Error> {
    let mut cfg = load_config(cli)?;
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(n) = a.iterations {
        cfg.train.iterations = n;
    }
    if let Some(r) = a.rank {
        cfg.adapter.rank = r;
    }
    let arch = cfg.arch()?;
    let task = cfg.task(&a.task)?.clone();
    let base_path = absolute(&a.base)?;
    let base: GeneratorWeights<f32> = load_base(&base_path, &arch)?;
    let root = a
        .registry
        .clone()
        .unwrap_or_else(|| cfg.run.out.join("registry"));
    let mut registry = Registry::create(&root, &arch, base.fingerprint(), &base_path)?;
    if registry.task(&task.id).is_ok() {
        return Err(Error::DuplicateTask(task.id));
    }
    let explicit = a.alpha_fc.zip(a.alpha_conv);
    let (res, data) = harness::adapt_task(&cfg, &base, &task, explicit)?;
    registry.add_task(
        &task.id,
        &res.adapters,
        TaskMeta {
            l_st: res.l_st,
            proxy_fid: res.metrics.proxy_fid,
            diversity: res.metrics.diversity,
            dataset: data.spec,
        },
    )?;
    let logs = root.join("logs");
    std::fs::create_dir_all(&logs).map_err(|source| Error::Io {
        path: logs.clone(),
        source,
    })?;
    write(
        &logs.join(format!("{}.csv", task.id)),
        progress_csv(&res.log),
    )?;
    println!("{}", AdaptResult::CSV_HEADER);
    println!("{}", res.csv_row());
    Ok(())
}

fn cmd_eval(cli: &Cli, registry: &Path) -> Result<(), Error> {
    let mut cfg = load_config(cli)?;
    if let Some(s) = cli.seed {
        cfg.run.eval_seed = s;
    }
    if !registry.is_dir() {
        return Err(Error::Config(format!(
            "registry {} does not exist",
            registry.display()
        )));
    }
    let reg = Registry::open(registry)?;
    let table = harness::evaluate_registry(&reg, &cfg.run)?;
    harness::write_report(&cfg.run.out, "eval", &table.to_csv(), &table.to_json())?;
    print!("{}", table.to_csv());
    Ok(())
}

fn cmd_ablate(
    cli: &Cli,
    axis: &str,
    base: &Path,
    tasks: &[String],
    iterations: Option<usize>,
) -> Result<(), Error> {
    let axis = Axis::parse(axis)?;
    let mut cfg = load_config(cli)?;
    if let Some(s) = cli.seed {
        cfg.run.seeds = vec![s];
    }
    if let Some(n) = iterations {
        cfg.train.iterations = n;
    }
    let arch = cfg.arch()?;
    let base: GeneratorWeights<f32> = load_base(base, &arch)?;
    let selected = if tasks.is_empty() {
        cfg.tasks.clone()
    } else {
        tasks
            .iter()
            .map(|t| cfg.task(t).cloned())
            .collect::<Result<_, _>>()?
    };
    let table = harness::ablate(&cfg, &base, axis, &selected, &cfg.run.seeds)?;
    let stem = format!("ablation_{}", axis.name());
    harness::write_report(&cfg.run.out, &stem, &table.to_csv(), &table.to_json())?;
    write(
        &cfg.run.out.join(format!("{stem}_cells.csv")),
        table.cells_csv(),
    )?;
    print!("{}", table.to_csv());
    Ok(())
}

fn cmd_count(cli: &Cli, arch: Option<&str>, rank: Option<usize>) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    let spec = match arch {
        Some(name) => ArchSpec::preset(name)
            .ok_or_else(|| Error::Config(format!("unknown arch preset {name:?}")))?,
        None => cfg.arch()?,
    };
    let r = rank.unwrap_or(cfg.adapter.rank);
    if r == 0 {
        return Err(Error::Config("rank must be at least 1".into()));
    }
    println!("{}", serde_json::to_string_pretty(&count_params(&spec, r))?);
    Ok(())
}

fn cmd_gen_dataset(
    cli: &Cli,
    kind: &str,
    count: usize,
    resolution: Option<usize>,
    rotation: f64,
    frequency: f64,
) -> Result<(), Error> {
    let cfg = load_config(cli)?;
    let kind = match kind {
        "source" => DatasetKind::Source,
        "palette" => DatasetKind::Palette { rotation },
        "shape" => DatasetKind::Shape,
        "texture" => DatasetKind::Texture { frequency },
        other => return Err(Error::Config(format!("unknown dataset kind {other:?}"))),
    };
    let spec = DatasetSpec {
        kind,
        count,
        seed: cli.seed.unwrap_or(cfg.source.seed),
        resolution: match resolution {
            Some(r) => r,
            None => cfg.arch()?.resolution(),
        },
    };
    require_dir(&cfg.run.out)?;
    let paths = write_dataset(&spec, &cfg.run.out)?;
    println!("wrote {} images to {}", paths.len(), cfg.run.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), Error> {
    if std::env::var("COLORA_REFERENCE_MODE").as_deref() == Ok("1") {
        log::debug!("reference mode: single-threaded execution");
    }
    match &cli.cmd {
        Command::Pretrain { iterations } => cmd_pretrain(cli, *iterations),
        Command::Adapt(a) => cmd_adapt(cli, a),
        Command::Eval { registry } => cmd_eval(cli, registry),
        Command::Ablate {
            axis,
            base,
            tasks,
            iterations,
        } => cmd_ablate(cli, axis, base, tasks, *iterations),
        Command::Count { arch, rank } => cmd_count(cli, arch.as_deref(), *rank),
        Command::GenDataset {
            kind,
            count,
            resolution,
            rotation,
            frequency,
        } => cmd_gen_dataset(cli, kind, *count, *resolution, *rotation, *frequency),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
