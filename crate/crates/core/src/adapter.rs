//! Low-rank adapters for frozen generator weights.
//!
//! Fully-connected layers get a plain LoRA update `(α_fc / r) · B·A`.
//! Convolutions get a LoRA-in-LoRA update whose high-order factor is itself
//! low rank:
//!
//! ```text
//! B[o,s,u,v] = act( Σ_t B′[o,t] · M[t,s,u,v] )
//! Δ[o,i,u,v] = (α_conv / r) · act( Σ_s B[o,s,u,v] · A[s,i] )
//! ```
//!
//! `B′` (or `B` for FC) starts at zero, so a fresh adapter leaves the base
//! weights untouched. Because `relu′(0) = 1` on the tape, gradients still
//! reach every factor at initialization.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::networks::{ArchSpec, LayerKind};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Standard deviation of the Gaussian-initialized factors.
pub const INIT_STD: f64 = 0.02;

const LEAKY_SLOPE: f64 = 0.2;

/// Nonlinearity applied at both composition stages of a conv adapter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu,
    None,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::LeakyRelu => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            2 => Some(Activation::LeakyRelu),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::None => "none",
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
        }
    }

    pub fn apply<S: Scalar>(self, tape: &mut Tape<S>, x: Var) -> Result<Var> {
        Ok(match self {
            Activation::None => x,
            Activation::Relu => tape.relu(x)?,
            Activation::LeakyRelu => tape.leaky_relu(x, S::from_f64_lossy(LEAKY_SLOPE))?,
        })
    }
}

/// Which layer kinds carry adapters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    #[default]
    Both,
    FcOnly,
    ConvOnly,
}

impl Placement {
    pub fn includes(self, kind: &LayerKind) -> bool {
        match self {
            Placement::Both => true,
            Placement::FcOnly => kind.is_fc(),
            Placement::ConvOnly => !kind.is_fc(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Placement::Both => "both",
            Placement::FcOnly => "fc_only",
            Placement::ConvOnly => "conv_only",
        }
    }
}

/// Hyperparameters shared by every adapter of a set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub rank: usize,
    pub alpha_fc: f64,
    pub alpha_conv: f64,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub placement: Placement,
}

impl AdapterConfig {
    pub fn new(rank: usize, alpha_fc: f64, alpha_conv: f64) -> Self {
        Self {
            rank,
            alpha_fc,
            alpha_conv,
            activation: Activation::Relu,
            placement: Placement::Both,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be at least 1".into()));
        }
        for (name, a) in [("alpha_fc", self.alpha_fc), ("alpha_conv", self.alpha_conv)] {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be positive, got {a}"
                )));
            }
        }
        Ok(())
    }
}

/// LoRA factors for a fully-connected weight `[d_out×d_in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraFcAdapter<S: Scalar = f32> {
    /// `[d_out×r]`
    pub b: Tensor<S>,
    /// `[r×d_in]`
    pub a: Tensor<S>,
    pub alpha: f64,
    pub rank: usize,
}

/// LoRA-in-LoRA factors for a convolution weight `[c_out×c_in×k×k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LLoraConvAdapter<S: Scalar = f32> {
    /// `[c_out×r]`
    pub b_prime: Tensor<S>,
    /// `[r×r×k×k]`
    pub m_inst: Tensor<S>,
    /// `[r×c_in]`
    pub a: Tensor<S>,
    pub alpha: f64,
    pub rank: usize,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerAdapter<S: Scalar = f32> {
    Fc(LoraFcAdapter<S>),
    Conv(LLoraConvAdapter<S>),
}

fn shape_err(layer: &str, reason: impl Into<String>) -> Error {
    Error::AdapterShape {
        layer: layer.to_string(),
        reason: reason.into(),
    }
}

impl<S: Scalar> LoraFcAdapter<S> {
    pub fn d_out(&self) -> usize {
        self.b.shape()[0]
    }

    pub fn d_in(&self) -> usize {
        self.a.shape()[1]
    }

    fn check(&self) -> Result<()> {
        let (sb, sa) = (self.b.shape(), self.a.shape());
        if sb.len() != 2 || sa.len() != 2 || sb[1] != self.rank || sa[0] != self.rank {
            return Err(shape_err(
                "fc",
                format!("B {sb:?} / A {sa:?} inconsistent with rank {}", self.rank),
            ));
        }
        Ok(())
    }
}

impl<S: Scalar> LLoraConvAdapter<S> {
    pub fn c_out(&self) -> usize {
        self.b_prime.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.a.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.m_inst.shape()[2]
    }

    fn check(&self) -> Result<()> {
        let (sb, sm, sa) = (self.b_prime.shape(), self.m_inst.shape(), self.a.shape());
        let r = self.rank;
        let ok = sb.len() == 2
            && sb[1] == r
            && sm.len() == 4
            && sm[0] == r
            && sm[1] == r
            && sm[2] == sm[3]
            && sa.len() == 2
            && sa[0] == r;
        if !ok {
            return Err(shape_err(
                "conv",
                format!("B′ {sb:?} / M {sm:?} / A {sa:?} inconsistent with rank {r}"),
            ));
        }
        Ok(())
    }
}

impl<S: Scalar> LayerAdapter<S> {
    pub fn delta(&self) -> Result<Tensor<S>> {
        match self {
            LayerAdapter::Fc(ad) => lora_fc_delta(ad),
            LayerAdapter::Conv(ad) => llora_conv_delta(ad),
        }
    }

    pub fn rank(&self) -> usize {
        match self {
            LayerAdapter::Fc(ad) => ad.rank,
            LayerAdapter::Conv(ad) => ad.rank,
        }
    }

    pub fn delta_shape(&self) -> Vec<usize> {
        match self {
            LayerAdapter::Fc(ad) => vec![ad.d_out(), ad.d_in()],
            LayerAdapter::Conv(ad) => {
                let k = ad.kernel();
                vec![ad.c_out(), ad.c_in(), k, k]
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.numel()).sum()
    }

    /// Factor tensors with their suffixes, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Tensor<S>)> {
        match self {
            LayerAdapter::Fc(ad) => vec![("B", &ad.b), ("A", &ad.a)],
            LayerAdapter::Conv(ad) => vec![
                ("B_prime", &ad.b_prime),
                ("M_inst", &ad.m_inst),
                ("A", &ad.a),
            ],
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        match self {
            LayerAdapter::Fc(ad) => vec![&mut ad.b, &mut ad.a],
            LayerAdapter::Conv(ad) => vec![&mut ad.b_prime, &mut ad.m_inst, &mut ad.a],
        }
    }
}

/// `(α/r) · B·A` recorded on `tape`.
pub fn fc_delta_on<S: Scalar>(
    tape: &mut Tape<S>,
    b: Var,
    a: Var,
    alpha: f64,
    rank: usize,
) -> Result<Var> {
    let prod = tape.matmul(b, a)?;
    Ok(tape.scale(prod, S::from_f64_lossy(alpha / rank as f64))?)
}

/// `act(B′ × M)` with `M` contracted over its first rank axis:
/// `[c_out×r] × [r×r×k×k] -> [c_out×r×k×k]`.
pub fn conv_b_on<S: Scalar>(
    tape: &mut Tape<S>,
    b_prime: Var,
    m_inst: Var,
    act: Activation,
) -> Result<Var> {
    let sm = tape.shape(m_inst).to_vec();
    let c_out = tape.shape(b_prime)[0];
    let (r, k) = (sm[0], sm[2]);
    let m_flat = tape.reshape(m_inst, vec![r, r * k * k])?;
    let prod = tape.matmul(b_prime, m_flat)?;
    let activated = act.apply(tape, prod)?;
    Ok(tape.reshape(activated, vec![c_out, r, k, k])?)
}

/// Full LLoRA delta `(α/r) · act(B × A)` with `B = act(B′ × M)`.
pub fn conv_delta_on<S: Scalar>(
    tape: &mut Tape<S>,
    b_prime: Var,
    m_inst: Var,
    a: Var,
    act: Activation,
    alpha: f64,
    rank: usize,
) -> Result<Var> {
    let b = conv_b_on(tape, b_prime, m_inst, act)?;
    let sb = tape.shape(b).to_vec();
    let (c_out, r, k) = (sb[0], sb[1], sb[2]);
    let c_in = tape.shape(a)[1];
    // [o,s,u,v] -> [o,u,v,s] so the remaining rank axis is innermost.
    let b_last = tape.permute(b, &[0, 2, 3, 1])?;
    let b_mat = tape.reshape(b_last, vec![c_out * k * k, r])?;
    let prod = tape.matmul(b_mat, a)?;
    let activated = act.apply(tape, prod)?;
    let grid = tape.reshape(activated, vec![c_out, k, k, c_in])?;
    let delta = tape.permute(grid, &[0, 3, 1, 2])?;
    Ok(tape.scale(delta, S::from_f64_lossy(alpha / rank as f64))?)
}

/// `Ŵ = W₀ + Δ` on the tape. The base must be frozen.
pub fn merge_on<S: Scalar>(tape: &mut Tape<S>, base: Var, delta: Var) -> Result<Var> {
    if tape.requires_grad(base) {
        return Err(Error::BaseTrainable);
    }
    Ok(tape.add(base, delta)?)
}

pub fn lora_fc_delta<S: Scalar>(ad: &LoraFcAdapter<S>) -> Result<Tensor<S>> {
    ad.check()?;
    let mut tape = Tape::new();
    let b = tape.constant(ad.b.clone())?;
    let a = tape.constant(ad.a.clone())?;
    let d = fc_delta_on(&mut tape, b, a, ad.alpha, ad.rank)?;
    Ok(tape.value(d).clone())
}

pub fn llora_conv_b<S: Scalar>(ad: &LLoraConvAdapter<S>) -> Result<Tensor<S>> {
    ad.check()?;
    let mut tape = Tape::new();
    let bp = tape.constant(ad.b_prime.clone())?;
    let m = tape.constant(ad.m_inst.clone())?;
    let b = conv_b_on(&mut tape, bp, m, ad.activation)?;
    Ok(tape.value(b).clone())
}

pub fn llora_conv_delta<S: Scalar>(ad: &LLoraConvAdapter<S>) -> Result<Tensor<S>> {
    ad.check()?;
    let mut tape = Tape::new();
    let bp = tape.constant(ad.b_prime.clone())?;
    let m = tape.constant(ad.m_inst.clone())?;
    let a = tape.constant(ad.a.clone())?;
    let d = conv_delta_on(&mut tape, bp, m, a, ad.activation, ad.alpha, ad.rank)?;
    Ok(tape.value(d).clone())
}

/// `W₀ + Δ(ad)`; fails if `base` is trainable or shapes differ.
pub fn merged_weight<S: Scalar>(base: &Tensor<S>, ad: &LayerAdapter<S>) -> Result<Tensor<S>> {
    if base.requires_grad() {
        return Err(Error::BaseTrainable);
    }
    let delta = ad.delta()?;
    if delta.shape() != base.shape() {
        return Err(shape_err(
            "merge",
            format!("base {:?} vs delta {:?}", base.shape(), delta.shape()),
        ));
    }
    let data = base
        .data()
        .iter()
        .zip(delta.data())
        .map(|(&w, &d)| w + d)
        .collect();
    Ok(Tensor::new(base.shape().to_vec(), data)?)
}

/// One task's adapters, keyed by layer name in architecture order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdapterSet<S: Scalar = f32> {
    pub arch_fingerprint: Fingerprint,
    pub config: AdapterConfig,
    pub layers: IndexMap<String, LayerAdapter<S>>,
}

impl<S: Scalar> AdapterSet<S> {
    pub fn get(&self, layer: &str) -> Option<&LayerAdapter<S>> {
        self.layers.get(layer)
    }

    pub fn param_count(&self) -> usize {
        self.layers.values().map(|l| l.param_count()).sum()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        self.layers
            .values_mut()
            .flat_map(|l| l.tensors_mut())
            .collect()
    }

    /// `(layer/factor, tensor)` pairs in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        self.layers
            .iter()
            .flat_map(|(name, l)| {
                l.named_tensors()
                    .into_iter()
                    .map(move |(suffix, t)| (format!("{name}/{suffix}"), t))
            })
            .collect()
    }

    pub fn deltas(&self) -> Result<Vec<(String, Tensor<S>)>> {
        self.layers
            .iter()
            .map(|(name, l)| Ok((name.clone(), l.delta()?)))
            .collect()
    }

    /// Checks that this set was built for `arch`: matching fingerprint and
    /// exactly one correctly-shaped entry per adapted layer.
    pub fn verify_against(&self, arch: &ArchSpec) -> Result<()> {
        let fp = arch.fingerprint();
        if fp != self.arch_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: fp.to_hex(),
                found: self.arch_fingerprint.to_hex(),
            });
        }
        let expected: Vec<_> = arch
            .adaptable_layers()
            .into_iter()
            .filter(|l| self.config.placement.includes(&l.kind))
            .collect();
        if expected.len() != self.layers.len() {
            return Err(shape_err(
                "set",
                format!(
                    "{} entries, architecture expects {}",
                    self.layers.len(),
                    expected.len()
                ),
            ));
        }
        for shape in expected {
            let Some(ad) = self.layers.get(&shape.name) else {
                return Err(shape_err(&shape.name, "missing"));
            };
            if ad.delta_shape() != shape.kind.weight_shape() {
                return Err(shape_err(
                    &shape.name,
                    "delta shape does not match layer weight",
                ));
            }
            if ad.rank() != shape.kind.capped_rank(self.config.rank) {
                return Err(shape_err(
                    &shape.name,
                    format!("rank {} inconsistent with set rank", ad.rank()),
                ));
            }
        }
        Ok(())
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Result<BoundAdapters> {
        let mut layers = IndexMap::new();
        for (name, l) in &self.layers {
            let mut leaf = |t: &Tensor<S>| tape.leaf(t.clone().with_requires_grad(trainable));
            let bound = match l {
                LayerAdapter::Fc(ad) => BoundLayer::Fc {
                    b: leaf(&ad.b)?,
                    a: leaf(&ad.a)?,
                },
                LayerAdapter::Conv(ad) => BoundLayer::Conv {
                    b_prime: leaf(&ad.b_prime)?,
                    m_inst: leaf(&ad.m_inst)?,
                    a: leaf(&ad.a)?,
                },
            };
            layers.insert(name.clone(), bound);
        }
        Ok(BoundAdapters {
            config: self.config,
            layers,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub enum BoundLayer {
    Fc { b: Var, a: Var },
    Conv { b_prime: Var, m_inst: Var, a: Var },
}

/// An [`AdapterSet`] whose factors live on a tape.
#[derive(Clone, Debug)]
pub struct BoundAdapters {
    pub config: AdapterConfig,
    layers: IndexMap<String, BoundLayer>,
}

impl BoundAdapters {
    /// Factor variables in the same order as [`AdapterSet::tensors_mut`].
    pub fn params(&self) -> Vec<Var> {
        self.layers
            .values()
            .flat_map(|l| match *l {
                BoundLayer::Fc { b, a } => vec![b, a],
                BoundLayer::Conv { b_prime, m_inst, a } => vec![b_prime, m_inst, a],
            })
            .collect()
    }

    /// The delta for `layer`, or `None` when the layer is not adapted.
    pub fn delta<S: Scalar>(&self, tape: &mut Tape<S>, layer: &str) -> Result<Option<Var>> {
        let Some(l) = self.layers.get(layer) else {
            return Ok(None);
        };
        let c = &self.config;
        let d = match *l {
            BoundLayer::Fc { b, a } => fc_delta_on(tape, b, a, c.alpha_fc, c.rank)?,
            BoundLayer::Conv { b_prime, m_inst, a } => {
                conv_delta_on(tape, b_prime, m_inst, a, c.activation, c.alpha_conv, c.rank)?
            }
        };
        Ok(Some(d))
    }

    /// Base weight merged with this layer's delta, or the base itself.
    pub fn weight<S: Scalar>(&self, tape: &mut Tape<S>, layer: &str, base: Var) -> Result<Var> {
        match self.delta(tape, layer)? {
            Some(d) => merge_on(tape, base, d),
            None => Ok(base),
        }
    }
}

/// Builds zero-delta adapters for every adapted layer of `arch`:
/// `B = 0` and `B′ = 0`; `A` and `M_inst` drawn from `Normal(0, 0.02²)`.
///
/// Layers narrower than `config.rank` (ToRGB) get a rank capped at their
/// smaller dimension. A rank no layer can hold is rejected.
pub fn init_adapter_set<S: Scalar>(
    arch: &ArchSpec,
    config: AdapterConfig,
    seed: u64,
) -> Result<AdapterSet<S>> {
    config.validate()?;
    let shapes: Vec<_> = arch
        .adaptable_layers()
        .into_iter()
        .filter(|s| config.placement.includes(&s.kind))
        .collect();
    if let Some(widest) = shapes.iter().max_by_key(|s| s.kind.min_dim()) {
        if config.rank > widest.kind.min_dim() {
            return Err(Error::RankTooLarge {
                layer: widest.name.clone(),
                rank: config.rank,
                max: widest.kind.min_dim(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = IndexMap::new();
    for shape in shapes {
        let r = shape.kind.capped_rank(config.rank);
        let adapter = match shape.kind {
            LayerKind::Fc { d_in, d_out } => LayerAdapter::Fc(LoraFcAdapter {
                b: Tensor::zeros(vec![d_out, r]),
                a: Tensor::randn(vec![r, d_in], INIT_STD, &mut rng),
                alpha: config.alpha_fc,
                rank: r,
            }),
            LayerKind::Conv { c_in, c_out, k } => LayerAdapter::Conv(LLoraConvAdapter {
                b_prime: Tensor::zeros(vec![c_out, r]),
                m_inst: Tensor::randn(vec![r, r, k, k], INIT_STD, &mut rng),
                a: Tensor::randn(vec![r, c_in], INIT_STD, &mut rng),
                alpha: config.alpha_conv,
                rank: r,
                activation: config.activation,
            }),
        };
        layers.insert(shape.name, adapter);
    }
    Ok(AdapterSet {
        arch_fingerprint: arch.fingerprint(),
        config,
        layers,
    })
}

/// Per-layer entry of a [`ParamCountReport`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct LayerParamCount {
    pub layer: String,
    pub adapter_params: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamCountReport {
    pub rank: usize,
    pub base_params: u64,
    pub adapter_params: u64,
    pub ratio: f64,
    pub per_layer: Vec<LayerParamCount>,
}

/// Closed-form adapter size of one layer at rank `r` (capped per layer).
pub fn layer_adapter_params(kind: &LayerKind, r: usize) -> u64 {
    let r = kind.capped_rank(r) as u64;
    match *kind {
        LayerKind::Fc { d_in, d_out } => r * (d_in + d_out) as u64,
        LayerKind::Conv { c_in, c_out, k } => {
            c_out as u64 * r + r * r * (k * k) as u64 + r * c_in as u64
        }
    }
}

pub fn count_params(arch: &ArchSpec, r: usize) -> ParamCountReport {
    count_params_with(arch, r, Placement::Both)
}

pub fn count_params_with(arch: &ArchSpec, r: usize, placement: Placement) -> ParamCountReport {
    let per_layer: Vec<_> = arch
        .adaptable_layers()
        .into_iter()
        .filter(|l| placement.includes(&l.kind))
        .map(|l| LayerParamCount {
            adapter_params: layer_adapter_params(&l.kind, r),
            layer: l.name,
        })
        .collect();
    let adapter_params = per_layer.iter().map(|l| l.adapter_params).sum();
    let base_params = arch.base_param_count();
    ParamCountReport {
        rank: r,
        base_params,
        adapter_params,
        ratio: adapter_params as f64 / base_params as f64,
        per_layer,
    }
}
