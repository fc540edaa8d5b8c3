//! Run configuration, read from a TOML file.
//!
//! ```toml
//! [run]
//! seed = 0            # training seed
//! eval_seed = 1234    # sampling seed for every evaluation
//! out = "colora-out"
//! seeds = [0, 1, 2]   # ablation seeds
//!
//! [arch]
//! preset = "desk"     # or "mini", "stylegan2-256", or explicit ArchSpec fields
//!
//! [pretrain]          # TrainConfig for the base
//! iterations = 1500
//!
//! [train]             # TrainConfig for each adaptation
//! iterations = 1500
//!
//! [adapter]
//! rank = 1
//! activation = "relu" # relu | leaky_relu | none
//! placement = "both"  # both | fc_only | conv_only
//!
//! [alpha]
//! policy = "auto"     # auto | explicit (alpha_fc, alpha_conv) | sweep (multipliers)
//!
//! [source]
//! count = 200
//! seed = 1
//!
//! [[task]]
//! id = "palette"
//! kind = "palette"    # palette (rotation) | shape | texture (frequency)
//! rotation = 180.0
//! shots = 10
//! seed = 11
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::adapter::{Activation, AdapterConfig, Placement};
use crate::data::{DatasetKind, DatasetSpec};
use crate::error::{Error, Result};
use crate::networks::ArchSpec;
use crate::training::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub eval_seed: u64,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
    pub fid_samples: usize,
    pub diversity_samples: usize,
    /// Source images compared against each target when measuring L_st.
    pub probe_samples: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            eval_seed: 1234,
            out: PathBuf::from("colora-out"),
            seeds: vec![0, 1, 2],
            fid_samples: crate::metrics::FID_SAMPLES,
            diversity_samples: crate::metrics::DIVERSITY_SAMPLES,
            probe_samples: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ArchChoice {
    Preset { preset: String },
    Explicit(ArchSpec),
}

impl Default for ArchChoice {
    fn default() -> Self {
        ArchChoice::Preset {
            preset: "desk".into(),
        }
    }
}

impl ArchChoice {
    pub fn resolve(&self) -> Result<ArchSpec> {
        let arch = match self {
            ArchChoice::Preset { preset } => ArchSpec::preset(preset)
                .ok_or_else(|| Error::Config(format!("unknown arch preset {preset:?}")))?,
            ArchChoice::Explicit(a) => a.clone(),
        };
        arch.validate()?;
        Ok(arch)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterSection {
    pub rank: usize,
    pub activation: Activation,
    pub placement: Placement,
}

impl Default for AdapterSection {
    fn default() -> Self {
        Self {
            rank: 1,
            activation: Activation::Relu,
            placement: Placement::Both,
        }
    }
}

impl AdapterSection {
    pub fn with_alphas(&self, alpha_fc: f64, alpha_conv: f64) -> AdapterConfig {
        AdapterConfig {
            rank: self.rank,
            alpha_fc,
            alpha_conv,
            activation: self.activation,
            placement: self.placement,
        }
    }
}

/// How scaling factors are chosen for a task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlphaPolicy {
    /// `m = default_multiplier(L_st)`.
    Auto,
    Explicit {
        alpha_fc: f64,
        alpha_conv: f64,
    },
    /// Multipliers for the α ablation; single runs fall back to `Auto`.
    Sweep {
        #[serde(default = "default_multipliers")]
        multipliers: Vec<f64>,
    },
}

impl Default for AlphaPolicy {
    fn default() -> Self {
        AlphaPolicy::Auto
    }
}

pub fn default_multipliers() -> Vec<f64> {
    vec![1.0, 2.0, 3.0, 4.0, 5.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceSection {
    pub count: usize,
    pub seed: u64,
}

impl Default for SourceSection {
    fn default() -> Self {
        Self {
            count: 200,
            seed: 1,
        }
    }
}

fn default_shots() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: DatasetKind,
    #[serde(default = "default_shots")]
    pub shots: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub arch: ArchChoice,
    pub pretrain: TrainConfig,
    pub train: TrainConfig,
    pub adapter: AdapterSection,
    pub alpha: AlphaPolicy,
    pub source: SourceSection,
    #[serde(rename = "task")]
    pub tasks: Vec<TaskSpec>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let arch = self.arch.resolve()?;
        self.pretrain.validate()?;
        self.train.validate()?;
        if self.adapter.rank == 0 {
            return Err(Error::Config("adapter.rank must be at least 1".into()));
        }
        if self.run.fid_samples < 2 || self.run.diversity_samples < 2 || self.run.probe_samples == 0
        {
            return Err(Error::Config("run: sample counts too small".into()));
        }
        if self.run.diversity_samples > self.run.fid_samples {
            return Err(Error::Config(
                "run.diversity_samples must not exceed run.fid_samples".into(),
            ));
        }
        if self.source.count == 0 {
            return Err(Error::Config("source.count must be at least 1".into()));
        }
        match &self.alpha {
            AlphaPolicy::Explicit {
                alpha_fc,
                alpha_conv,
            } => {
                if !(*alpha_fc > 0.0 && *alpha_conv > 0.0) {
                    return Err(Error::Config(
                        "alpha: explicit values must be positive".into(),
                    ));
                }
            }
            AlphaPolicy::Sweep { multipliers } => {
                if multipliers.is_empty() || multipliers.iter().any(|m| !(*m > 0.0)) {
                    return Err(Error::Config(
                        "alpha.multipliers must be positive and non-empty".into(),
                    ));
                }
            }
            AlphaPolicy::Auto => {}
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.shots == 0 {
                return Err(Error::Config(format!(
                    "task {:?}: shots must be at least 1",
                    t.id
                )));
            }
            if matches!(t.kind, DatasetKind::Source) {
                return Err(Error::Config(format!(
                    "task {:?}: kind must be a target kind",
                    t.id
                )));
            }
            if self.tasks[..i].iter().any(|o| o.id == t.id) {
                return Err(Error::Config(format!("task {:?} listed twice", t.id)));
            }
            self.target_spec(t, &arch).validate()?;
        }
        Ok(())
    }

    pub fn arch(&self) -> Result<ArchSpec> {
        self.arch.resolve()
    }

    pub fn source_spec(&self, arch: &ArchSpec) -> DatasetSpec {
        DatasetSpec {
            kind: DatasetKind::Source,
            count: self.source.count,
            seed: self.source.seed,
            resolution: arch.resolution(),
        }
    }

    /// The few-shot training set of `task`; evaluation references are
    /// drawn from the same distribution past index `shots`.
    pub fn target_spec(&self, task: &TaskSpec, arch: &ArchSpec) -> DatasetSpec {
        DatasetSpec {
            kind: task.kind.clone(),
            count: task.shots,
            seed: task.seed,
            resolution: arch.resolution(),
        }
    }

    pub fn task(&self, id: &str) -> Result<&TaskSpec> {
        self.tasks
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Error::Config(format!("task {id:?} is not defined in the config")))
    }

    /// The built-in three-task synthetic benchmark.
    pub fn synthetic_benchmark(arch: &str) -> Self {
        let task = |id: &str, kind: DatasetKind, seed: u64| TaskSpec {
            id: id.into(),
            kind,
            shots: 10,
            seed,
        };
        Self {
            arch: ArchChoice::Preset {
                preset: arch.into(),
            },
            tasks: vec![
                task("palette", DatasetKind::Palette { rotation: 180.0 }, 11),
                task("shape", DatasetKind::Shape, 12),
                task("texture", DatasetKind::Texture { frequency: 4.0 }, 13),
            ],
            ..Self::default()
        }
    }
}
