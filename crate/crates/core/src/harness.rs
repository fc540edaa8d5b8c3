//! Experiment orchestration: pretraining, per-task adaptation, the continual
//! protocol, registry evaluation and the four ablation grids.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::adapter::{count_params_with, Activation, AdapterConfig, AdapterSet, Placement};
use crate::config::{AlphaPolicy, RunConfig, RunSection, TaskSpec};
use crate::data::DatasetSpec;
use crate::error::{Error, Result};
use crate::metrics::{
    auto_alphas, frechet_distance, image_stats, pairwise_diversity, select_alphas,
    source_target_distance, GaussStats,
};
use crate::networks::{generate_images, ArchSpec, GeneratorWeights};
use crate::registry::{load_base, Registry, TaskMeta};
use crate::report::{fmt_sig6, round_sig6};
use crate::tensor::Tensor;
use crate::training::{
    train_adaptation, train_base, write_progress, BaseOutcome, ProgressRow, TrainConfig,
};

const GEN_CHUNK: usize = 50;

/// Few-shot training images and the feature statistics of a held-out
/// reference set from the same distribution.
#[derive(Clone, Debug)]
pub struct TaskData {
    pub spec: DatasetSpec,
    pub shots: Vec<Tensor<f32>>,
    pub reference: GaussStats,
}

impl TaskData {
    pub fn load(spec: &DatasetSpec, reference_count: usize) -> Result<Self> {
        let shots = spec.tensors::<f32>(0, spec.count)?;
        let reference = image_stats(&spec.tensors::<f64>(spec.count, reference_count)?)?;
        Ok(Self {
            spec: spec.clone(),
            shots,
            reference,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub proxy_fid: f64,
    pub diversity: f64,
}

/// Proxy-FID against `reference` over `run.fid_samples` generated images
/// and diversity over the first `run.diversity_samples` of them.
pub fn evaluate(
    base: &GeneratorWeights<f32>,
    adapters: Option<&AdapterSet<f32>>,
    reference: &GaussStats,
    run: &RunSection,
) -> Result<EvalResult> {
    let imgs = generate_images(base, adapters, run.fid_samples, run.eval_seed, GEN_CHUNK)?;
    let proxy_fid = frechet_distance(&image_stats(&imgs)?, reference)?;
    let diversity = pairwise_diversity(&imgs[..run.diversity_samples])?;
    Ok(EvalResult {
        proxy_fid,
        diversity,
    })
}

/// Deterministic per-task training seed.
pub fn task_seed(seed: u64, task_id: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in task_id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

pub fn source_probe(cfg: &RunConfig, arch: &ArchSpec) -> Result<Vec<Tensor<f32>>> {
    let spec = cfg.source_spec(arch);
    spec.tensors(0, cfg.run.probe_samples.min(spec.count))
}

/// Trains the base generator on the configured source distribution.
pub fn pretrain(cfg: &RunConfig) -> Result<BaseOutcome> {
    let arch = cfg.arch()?;
    let data = cfg.source_spec(&arch).tensors::<f32>(0, cfg.source.count)?;
    let train = TrainConfig {
        seed: cfg.run.seed,
        ..cfg.pretrain.clone()
    };
    log::info!(
        "pretraining on {} source images for {} iterations",
        data.len(),
        train.iterations
    );
    train_base(&arch, &data, &train)
}

/// How the scaling factors of one run were chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AlphaPick {
    pub alpha_fc: f64,
    pub alpha_conv: f64,
    /// `None` for explicitly configured values.
    pub multiplier: Option<f64>,
}

pub fn pick_alphas(policy: &AlphaPolicy, l_st: f64) -> Result<AlphaPick> {
    match *policy {
        AlphaPolicy::Explicit {
            alpha_fc,
            alpha_conv,
        } => Ok(AlphaPick {
            alpha_fc,
            alpha_conv,
            multiplier: None,
        }),
        AlphaPolicy::Auto | AlphaPolicy::Sweep { .. } => {
            let c = auto_alphas(l_st)?;
            Ok(AlphaPick {
                alpha_fc: c.alpha_fc,
                alpha_conv: c.alpha_conv,
                multiplier: Some(c.multiplier),
            })
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdaptResult {
    pub task_id: String,
    pub l_st: f64,
    pub alpha: AlphaPick,
    pub params: usize,
    pub metrics: EvalResult,
    pub adapters: AdapterSet<f32>,
    pub log: Vec<ProgressRow>,
}

impl AdaptResult {
    pub const CSV_HEADER: &'static str =
        "task_id,l_st,alpha_fc,alpha_conv,params,proxy_fid,diversity";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.task_id,
            fmt_sig6(self.l_st),
            fmt_sig6(self.alpha.alpha_fc),
            fmt_sig6(self.alpha.alpha_conv),
            self.params,
            fmt_sig6(self.metrics.proxy_fid),
            fmt_sig6(self.metrics.diversity)
        )
    }
}

/// Trains one adapter set on `data` and evaluates it.
#[allow(clippy::too_many_arguments)]
pub fn adapt_once(
    base: &GeneratorWeights<f32>,
    task_id: &str,
    data: &TaskData,
    l_st: f64,
    alpha: AlphaPick,
    adapter: AdapterConfig,
    train: &TrainConfig,
    run: &RunSection,
) -> Result<AdaptResult> {
    let cfg = AdapterConfig {
        alpha_fc: alpha.alpha_fc,
        alpha_conv: alpha.alpha_conv,
        ..adapter
    };
    let out = train_adaptation(base, &data.shots, train, cfg)?;
    let metrics = evaluate(base, Some(&out.adapters), &data.reference, run)?;
    Ok(AdaptResult {
        task_id: task_id.to_string(),
        l_st,
        alpha,
        params: out.adapters.param_count(),
        metrics,
        adapters: out.adapters,
        log: out.log,
    })
}

/// Measures L_st, picks α per the config policy (or `explicit`), trains
/// and evaluates a single task.
pub fn adapt_task(
    cfg: &RunConfig,
    base: &GeneratorWeights<f32>,
    task: &TaskSpec,
    explicit: Option<(f64, f64)>,
) -> Result<(AdaptResult, TaskData)> {
    let arch = &base.arch;
    let data = TaskData::load(&cfg.target_spec(task, arch), cfg.run.fid_samples)?;
    let l_st = source_target_distance(&source_probe(cfg, arch)?, &data.shots)?;
    let alpha = match explicit {
        Some((alpha_fc, alpha_conv)) => pick_alphas(
            &AlphaPolicy::Explicit {
                alpha_fc,
                alpha_conv,
            },
            l_st,
        )?,
        None => pick_alphas(&cfg.alpha, l_st)?,
    };
    let train = TrainConfig {
        seed: task_seed(cfg.run.seed, &task.id),
        ..cfg.train.clone()
    };
    log::info!(
        "task {}: L_st={l_st:.4} alpha_fc={:.4} alpha_conv={:.4}",
        task.id,
        alpha.alpha_fc,
        alpha.alpha_conv
    );
    let res = adapt_once(
        base,
        &task.id,
        &data,
        l_st,
        alpha,
        cfg.adapter.with_alphas(alpha.alpha_fc, alpha.alpha_conv),
        &train,
        &cfg.run,
    )?;
    Ok((res, data))
}

/// Rows are method configurations, columns per-task metric pairs plus the
/// average, matching the continual-learning results layout.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultsTable {
    pub task_ids: Vec<String>,
    pub rows: Vec<(String, Vec<EvalResult>)>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n.max(1) as f64
}

impl ResultsTable {
    pub fn averages(cells: &[EvalResult]) -> EvalResult {
        EvalResult {
            proxy_fid: mean(cells.iter().map(|c| c.proxy_fid)),
            diversity: mean(cells.iter().map(|c| c.diversity)),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method");
        for t in &self.task_ids {
            let _ = write!(out, ",{t}_proxy_fid,{t}_diversity");
        }
        out.push_str(",avg_proxy_fid,avg_diversity\n");
        for (method, cells) in &self.rows {
            out.push_str(method);
            for c in cells.iter().chain(std::iter::once(&Self::averages(cells))) {
                let _ = write!(out, ",{},{}", fmt_sig6(c.proxy_fid), fmt_sig6(c.diversity));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<_> = self
            .rows
            .iter()
            .map(|(method, cells)| {
                let avg = Self::averages(cells);
                json!({
                    "method": method,
                    "tasks": self.task_ids.iter().zip(cells).map(|(t, c)| json!({
                        "task_id": t,
                        "proxy_fid": round_sig6(c.proxy_fid),
                        "diversity": round_sig6(c.diversity),
                    })).collect::<Vec<_>>(),
                    "avg_proxy_fid": round_sig6(avg.proxy_fid),
                    "avg_diversity": round_sig6(avg.diversity),
                })
            })
            .collect();
        json!({ "rows": rows })
    }
}

/// Everything measured for one task of a continual run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskOutcome {
    pub task_id: String,
    pub l_st: f64,
    pub alpha: AlphaPick,
    pub params: usize,
    pub base: EvalResult,
    /// Right after the task was trained, from the in-memory adapters.
    pub after_training: EvalResult,
    /// After the last task, from the reloaded checkpoint.
    pub after_final: EvalResult,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinualReport {
    pub method: String,
    pub outcomes: Vec<TaskOutcome>,
}

impl ContinualReport {
    pub fn table(&self) -> ResultsTable {
        let ids = self.outcomes.iter().map(|o| o.task_id.clone()).collect();
        ResultsTable {
            task_ids: ids,
            rows: vec![
                (
                    "base".to_string(),
                    self.outcomes.iter().map(|o| o.base).collect(),
                ),
                (
                    self.method.clone(),
                    self.outcomes.iter().map(|o| o.after_final).collect(),
                ),
            ],
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let details: Vec<_> = self
            .outcomes
            .iter()
            .map(|o| {
                json!({
                    "task_id": o.task_id,
                    "l_st": round_sig6(o.l_st),
                    "alpha_fc": round_sig6(o.alpha.alpha_fc),
                    "alpha_conv": round_sig6(o.alpha.alpha_conv),
                    "params": o.params,
                    "base_proxy_fid": round_sig6(o.base.proxy_fid),
                    "after_training_proxy_fid": round_sig6(o.after_training.proxy_fid),
                    "after_training_diversity": round_sig6(o.after_training.diversity),
                    "final_proxy_fid": round_sig6(o.after_final.proxy_fid),
                    "final_diversity": round_sig6(o.after_final.diversity),
                })
            })
            .collect();
        let mut v = self.table().to_json();
        v["tasks"] = json!(details);
        v
    }
}

pub fn method_label(a: &AdapterConfig) -> String {
    format!(
        "colora r={} {} {}",
        a.rank,
        a.placement.name(),
        a.activation.name()
    )
}

/// Trains every configured task in order, storing each adapter set in the
/// registry at `registry_root`, then re-evaluates every task from its
/// checkpoint.
pub fn run_continual(
    cfg: &RunConfig,
    base: &GeneratorWeights<f32>,
    base_checkpoint: &Path,
    registry_root: &Path,
) -> Result<(Registry, ContinualReport)> {
    if cfg.tasks.is_empty() {
        return Err(Error::Config(
            "continual run needs at least one [[task]]".into(),
        ));
    }
    let mut registry = Registry::create(
        registry_root,
        &base.arch,
        base.fingerprint(),
        base_checkpoint,
    )?;
    let logs = registry_root.join("logs");
    fs::create_dir_all(&logs).map_err(|e| Error::io(&logs, e))?;
    let mut partial = Vec::new();
    let mut refs = Vec::new();
    for task in &cfg.tasks {
        let (res, data) = adapt_task(cfg, base, task, None)?;
        let base_eval = evaluate(base, None, &data.reference, &cfg.run)?;
        let log_path = logs.join(format!("{}.csv", task.id));
        let mut buf = Vec::new();
        write_progress(&mut buf, &res.log).map_err(|e| Error::io(&log_path, e))?;
        fs::write(&log_path, buf).map_err(|e| Error::io(&log_path, e))?;
        registry.add_task(
            &task.id,
            &res.adapters,
            TaskMeta {
                l_st: res.l_st,
                proxy_fid: res.metrics.proxy_fid,
                diversity: res.metrics.diversity,
                dataset: data.spec.clone(),
            },
        )?;
        partial.push((res, base_eval));
        refs.push(data.reference);
    }
    let mut outcomes = Vec::new();
    for ((res, base_eval), reference) in partial.into_iter().zip(&refs) {
        let reloaded = registry.load_task(&res.task_id)?;
        let after_final = evaluate(base, Some(&reloaded), reference, &cfg.run)?;
        outcomes.push(TaskOutcome {
            task_id: res.task_id,
            l_st: res.l_st,
            alpha: res.alpha,
            params: res.params,
            base: base_eval,
            after_training: res.metrics,
            after_final,
        });
    }
    let method = method_label(&cfg.adapter.with_alphas(1.0, 1.0));
    Ok((registry, ContinualReport { method, outcomes }))
}

/// Re-evaluates every task stored in `registry` over its recorded base.
pub fn evaluate_registry(registry: &Registry, run: &RunSection) -> Result<ResultsTable> {
    if registry.tasks().is_empty() {
        return Err(Error::EmptyRegistry(registry.root().to_path_buf()));
    }
    let base_path = if registry.base_checkpoint.is_absolute() {
        registry.base_checkpoint.clone()
    } else {
        registry.root().join(&registry.base_checkpoint)
    };
    let base: GeneratorWeights<f32> = load_base(&base_path, &registry.arch)?;
    if base.fingerprint() != registry.base_fingerprint {
        return Err(Error::FingerprintMismatch {
            expected: registry.base_fingerprint.to_hex(),
            found: base.fingerprint().to_hex(),
        });
    }
    let mut cells = Vec::new();
    for rec in registry.tasks() {
        let adapters = registry.load_task(&rec.task_id)?;
        let data = TaskData::load(&rec.dataset, run.fid_samples)?;
        cells.push(evaluate(&base, Some(&adapters), &data.reference, run)?);
    }
    Ok(ResultsTable {
        task_ids: registry.tasks().iter().map(|t| t.task_id.clone()).collect(),
        rows: vec![("registry".to_string(), cells)],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Rank,
    Alpha,
    Activation,
    Placement,
}

impl Axis {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rank" => Ok(Axis::Rank),
            "alpha" => Ok(Axis::Alpha),
            "activation" => Ok(Axis::Activation),
            "placement" => Ok(Axis::Placement),
            other => Err(Error::Config(format!(
                "unknown ablation axis {other:?} (expected rank, alpha, activation or placement)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Rank => "rank",
            Axis::Alpha => "alpha",
            Axis::Activation => "activation",
            Axis::Placement => "placement",
        }
    }
}

/// One grid value of an ablation.
#[derive(Clone, Debug, PartialEq)]
enum GridPoint {
    Rank(usize),
    Multiplier(f64),
    Activation(Activation),
    Placement(Placement),
}

impl GridPoint {
    fn label(&self) -> String {
        match self {
            GridPoint::Rank(r) => format!("r={r}"),
            GridPoint::Multiplier(m) => format!("m={m}"),
            GridPoint::Activation(a) => a.name().to_string(),
            GridPoint::Placement(p) => p.name().to_string(),
        }
    }
}

fn grid(axis: Axis, policy: &AlphaPolicy) -> Vec<GridPoint> {
    match axis {
        Axis::Rank => [1, 2, 4, 8].map(GridPoint::Rank).to_vec(),
        Axis::Alpha => match policy {
            AlphaPolicy::Sweep { multipliers } => multipliers
                .iter()
                .map(|&m| GridPoint::Multiplier(m))
                .collect(),
            _ => crate::config::default_multipliers()
                .into_iter()
                .map(GridPoint::Multiplier)
                .collect(),
        },
        Axis::Activation => [Activation::None, Activation::Relu]
            .map(GridPoint::Activation)
            .to_vec(),
        Axis::Placement => [Placement::FcOnly, Placement::ConvOnly, Placement::Both]
            .map(GridPoint::Placement)
            .to_vec(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationCell {
    pub row: String,
    pub seed: u64,
    pub task_id: String,
    pub alpha_fc: f64,
    pub alpha_conv: f64,
    pub params: usize,
    pub metrics: EvalResult,
}

/// Rows are grid values; each cell of the summary averages over seeds.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub axis: Axis,
    pub row_labels: Vec<String>,
    pub row_params: Vec<u64>,
    pub task_ids: Vec<String>,
    pub seeds: Vec<u64>,
    pub cells: Vec<AblationCell>,
}

impl AblationTable {
    pub fn cell(&self, row: &str, seed: u64, task: &str) -> Option<&AblationCell> {
        self.cells
            .iter()
            .find(|c| c.row == row && c.seed == seed && c.task_id == task)
    }

    /// Per-row, per-task metrics averaged over seeds.
    pub fn summary(&self) -> Vec<(String, u64, Vec<EvalResult>)> {
        self.row_labels
            .iter()
            .zip(&self.row_params)
            .map(|(row, &params)| {
                let per_task = self
                    .task_ids
                    .iter()
                    .map(|t| {
                        let cs: Vec<_> = self
                            .cells
                            .iter()
                            .filter(|c| &c.row == row && &c.task_id == t)
                            .collect();
                        EvalResult {
                            proxy_fid: mean(cs.iter().map(|c| c.metrics.proxy_fid)),
                            diversity: mean(cs.iter().map(|c| c.metrics.diversity)),
                        }
                    })
                    .collect();
                (row.clone(), params, per_task)
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{},params", self.axis.name());
        for t in &self.task_ids {
            let _ = write!(out, ",{t}_proxy_fid,{t}_diversity");
        }
        out.push_str(",avg_proxy_fid,avg_diversity\n");
        for (row, params, cells) in self.summary() {
            let _ = write!(out, "{row},{params}");
            for c in cells
                .iter()
                .chain(std::iter::once(&ResultsTable::averages(&cells)))
            {
                let _ = write!(out, ",{},{}", fmt_sig6(c.proxy_fid), fmt_sig6(c.diversity));
            }
            out.push('\n');
        }
        out
    }

    pub fn cells_csv(&self) -> String {
        let mut out = format!(
            "{},seed,task_id,alpha_fc,alpha_conv,params,proxy_fid,diversity\n",
            self.axis.name()
        );
        for c in &self.cells {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                c.row,
                c.seed,
                c.task_id,
                fmt_sig6(c.alpha_fc),
                fmt_sig6(c.alpha_conv),
                c.params,
                fmt_sig6(c.metrics.proxy_fid),
                fmt_sig6(c.metrics.diversity)
            );
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<_> = self
            .summary()
            .into_iter()
            .map(|(row, params, cells)| {
                json!({
                    "row": row,
                    "params": params,
                    "tasks": self.task_ids.iter().zip(&cells).map(|(t, c)| json!({
                        "task_id": t,
                        "proxy_fid": round_sig6(c.proxy_fid),
                        "diversity": round_sig6(c.diversity),
                    })).collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({ "axis": self.axis.name(), "seeds": self.seeds, "rows": rows })
    }

    /// For the placement axis: per seed, whether the `both` row has proxy-FID
    /// no higher than each single-placement row on every task.
    pub fn placement_dominance(&self) -> Vec<(u64, bool)> {
        let both = Placement::Both.name();
        let singles = [Placement::FcOnly.name(), Placement::ConvOnly.name()];
        self.seeds
            .iter()
            .map(|&s| {
                let ok = self.task_ids.iter().all(|t| {
                    let Some(b) = self.cell(both, s, t) else {
                        return false;
                    };
                    singles.iter().all(|single| {
                        self.cell(single, s, t)
                            .is_some_and(|c| b.metrics.proxy_fid <= c.metrics.proxy_fid)
                    })
                });
                (s, ok)
            })
            .collect()
    }
}

/// Runs the full grid of `axis` for every task and seed. Each cell trains
/// a fresh adapter set over `base` and evaluates it.
pub fn ablate(
    cfg: &RunConfig,
    base: &GeneratorWeights<f32>,
    axis: Axis,
    tasks: &[TaskSpec],
    seeds: &[u64],
) -> Result<AblationTable> {
    if tasks.is_empty() || seeds.is_empty() {
        return Err(Error::Config(
            "ablation needs at least one task and one seed".into(),
        ));
    }
    let arch = &base.arch;
    let points = grid(axis, &cfg.alpha);
    let probe = source_probe(cfg, arch)?;
    let mut prepared = Vec::new();
    for t in tasks {
        let data = TaskData::load(&cfg.target_spec(t, arch), cfg.run.fid_samples)?;
        let l_st = source_target_distance(&probe, &data.shots)?;
        prepared.push((t, data, l_st));
    }
    let mut cells = Vec::new();
    let mut row_params = Vec::new();
    for p in &points {
        let mut adapter = cfg.adapter;
        match *p {
            GridPoint::Rank(r) => adapter.rank = r,
            GridPoint::Activation(a) => adapter.activation = a,
            GridPoint::Placement(pl) => adapter.placement = pl,
            GridPoint::Multiplier(_) => {}
        }
        row_params.push(count_params_with(arch, adapter.rank, adapter.placement).adapter_params);
        for &seed in seeds {
            for (task, data, l_st) in &prepared {
                let alpha = match *p {
                    GridPoint::Multiplier(m) => {
                        let c = select_alphas(*l_st, m)?;
                        AlphaPick {
                            alpha_fc: c.alpha_fc,
                            alpha_conv: c.alpha_conv,
                            multiplier: Some(m),
                        }
                    }
                    _ => pick_alphas(&cfg.alpha, *l_st)?,
                };
                let train = TrainConfig {
                    seed: task_seed(seed, &task.id),
                    ..cfg.train.clone()
                };
                log::info!(
                    "ablate {}={} seed={seed} task={}",
                    axis.name(),
                    p.label(),
                    task.id
                );
                let cfg_a = adapter.with_alphas(alpha.alpha_fc, alpha.alpha_conv);
                let res = adapt_once(base, &task.id, data, *l_st, alpha, cfg_a, &train, &cfg.run)?;
                cells.push(AblationCell {
                    row: p.label(),
                    seed,
                    task_id: task.id.clone(),
                    alpha_fc: alpha.alpha_fc,
                    alpha_conv: alpha.alpha_conv,
                    params: res.params,
                    metrics: res.metrics,
                });
            }
        }
    }
    Ok(AblationTable {
        axis,
        row_labels: points.iter().map(GridPoint::label).collect(),
        row_params,
        task_ids: tasks.iter().map(|t| t.id.clone()).collect(),
        seeds: seeds.to_vec(),
        cells,
    })
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn write_report(dir: &Path, stem: &str, csv: &str, json: &serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = dir.join(format!("{stem}.csv"));
    fs::write(&c, csv).map_err(|e| Error::io(&c, e))?;
    let j = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(json)? + "\n";
    fs::write(&j, text).map_err(|e| Error::io(&j, e))?;
    Ok(())
}
