//! Continual few-shot generator adaptation with low-rank adapters.
//!
//! A frozen base generator is specialised to a sequence of target domains.
//! Each domain gets its own small [`AdapterSet`]: classic low-rank factors on
//! fully connected layers and a kernel-aware nonlinear factorisation on
//! convolutions. Adapter sets are persisted in a [`Registry`] and can be
//! reloaded at any time without touching the base weights.

pub mod adapter;
pub mod config;
pub mod data;
pub mod error;
pub mod fingerprint;
pub mod harness;
pub mod metrics;
pub mod networks;
pub mod registry;
pub mod report;
pub mod tensor;
pub mod training;

pub use adapter::{
    count_params, count_params_with, init_adapter_set, Activation, AdapterConfig, AdapterSet,
    LLoraConvAdapter, LayerAdapter, LoraFcAdapter, ParamCountReport, Placement,
};
pub use config::RunConfig;
pub use data::{DatasetKind, DatasetSpec};
pub use error::{Error, Result};
pub use fingerprint::Fingerprint;
pub use networks::{ArchSpec, CriticWeights, GeneratorWeights};
pub use registry::{Registry, TaskRecord};
pub use tensor::{Scalar, Tape, Tensor, TensorError, Var};
pub use training::{train_adaptation, train_base, TrainConfig};
