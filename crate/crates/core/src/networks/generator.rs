use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::{ArchSpec, LayerKind};
use crate::adapter::{AdapterSet, BoundAdapters};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::tensor::{Scalar, Tape, Tensor, Var};

const LEAKY_SLOPE: f64 = 0.2;
const DEMOD_EPS: f64 = 1e-8;
const NOISE_INIT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct FcWeights<S: Scalar = f32> {
    /// `[d_out×d_in]`
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> FcWeights<S> {
    fn init(d_in: usize, d_out: usize, std: f64, bias: f64, rng: &mut ChaCha8Rng) -> Self {
        Self {
            weight: Tensor::randn(vec![d_out, d_in], std, rng),
            bias: Tensor::full(vec![d_out], S::from_f64_lossy(bias)),
        }
    }
}

/// A style-modulated convolution with its affine style projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ModConvWeights<S: Scalar = f32> {
    pub name: String,
    /// `[c_out×c_in×k×k]`
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    /// Maps `w` to per-input-channel scales.
    pub style: FcWeights<S>,
    /// Scalar noise gain; absent on ToRGB.
    pub noise_strength: Option<Tensor<S>>,
}

/// Frozen generator parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorWeights<S: Scalar = f32> {
    pub arch: ArchSpec,
    pub mapping: Vec<FcWeights<S>>,
    /// Learned constant input `[c×r0×r0]`.
    pub constant: Tensor<S>,
    pub convs: Vec<ModConvWeights<S>>,
    pub to_rgb: ModConvWeights<S>,
}

impl<S: Scalar> GeneratorWeights<S> {
    pub fn init(arch: &ArchSpec, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mapping = arch
            .mapping_shapes()
            .into_iter()
            .map(|l| match l.kind {
                LayerKind::Fc { d_in, d_out } => {
                    FcWeights::init(d_in, d_out, (1.0 / d_in as f64).sqrt(), 0.0, &mut rng)
                }
                LayerKind::Conv { .. } => unreachable!("mapping layers are FC"),
            })
            .collect();
        let r0 = arch.base_resolution;
        let constant = Tensor::randn(vec![arch.const_channels(), r0, r0], 1.0, &mut rng);
        let style_std = 0.5 / (arch.w_dim as f64).sqrt();
        let conv = |name: String, kind: LayerKind, noise: bool, rng: &mut ChaCha8Rng| {
            let LayerKind::Conv { c_in, c_out, k } = kind else {
                unreachable!("synthesis layers are convolutions")
            };
            ModConvWeights {
                name,
                weight: Tensor::randn(
                    vec![c_out, c_in, k, k],
                    (1.0 / (c_in * k * k) as f64).sqrt(),
                    rng,
                ),
                bias: Tensor::zeros(vec![c_out]),
                style: FcWeights::init(arch.w_dim, c_in, style_std, 1.0, rng),
                noise_strength: noise.then(|| Tensor::scalar(S::from_f64_lossy(NOISE_INIT))),
            }
        };
        let convs = arch
            .synthesis_shapes()
            .into_iter()
            .map(|(_, l)| conv(l.name, l.kind, true, &mut rng))
            .collect();
        let rgb = arch.to_rgb_shape();
        let to_rgb = conv(rgb.name, rgb.kind, false, &mut rng);
        Ok(Self {
            arch: arch.clone(),
            mapping,
            constant,
            convs,
            to_rgb,
        })
    }

    /// All parameters with stable names, in binding order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<S>)> {
        let mut out = Vec::new();
        for (i, fc) in self.mapping.iter().enumerate() {
            out.push((format!("map{i}.weight"), &fc.weight));
            out.push((format!("map{i}.bias"), &fc.bias));
        }
        out.push(("const".to_string(), &self.constant));
        for c in self.convs.iter().chain(std::iter::once(&self.to_rgb)) {
            out.push((format!("{}.weight", c.name), &c.weight));
            out.push((format!("{}.bias", c.name), &c.bias));
            out.push((format!("{}.style.weight", c.name), &c.style.weight));
            out.push((format!("{}.style.bias", c.name), &c.style.bias));
            if let Some(n) = &c.noise_strength {
                out.push((format!("{}.noise", c.name), n));
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        for fc in &mut self.mapping {
            out.push(&mut fc.weight);
            out.push(&mut fc.bias);
        }
        out.push(&mut self.constant);
        for c in self
            .convs
            .iter_mut()
            .chain(std::iter::once(&mut self.to_rgb))
        {
            out.push(&mut c.weight);
            out.push(&mut c.bias);
            out.push(&mut c.style.weight);
            out.push(&mut c.style.bias);
            if let Some(n) = &mut c.noise_strength {
                out.push(n);
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.numel()).sum()
    }

    /// SHA-256 over every named parameter.
    pub fn fingerprint(&self) -> Fingerprint {
        let named = self.named_tensors();
        Fingerprint::of_tensors(named.iter().map(|(n, t)| (n.as_str(), *t)))
    }

    /// Rebuilds weights from named tensors (as produced by
    /// [`GeneratorWeights::named_tensors`]), checking every shape.
    pub fn from_named(
        arch: &ArchSpec,
        mut tensors: indexmap::IndexMap<String, Tensor<S>>,
    ) -> Result<Self> {
        let mut w = Self::init(arch, 0)?;
        let names: Vec<String> = w.named_tensors().into_iter().map(|(n, _)| n).collect();
        if tensors.len() != names.len() {
            return Err(Error::Config(format!(
                "base weights: {} tensors, architecture expects {}",
                tensors.len(),
                names.len()
            )));
        }
        for (name, slot) in names.iter().zip(w.tensors_mut()) {
            let t = tensors
                .swap_remove(name)
                .ok_or_else(|| Error::Config(format!("base weights: missing tensor {name}")))?;
            if t.shape() != slot.shape() {
                return Err(Error::Config(format!(
                    "base weights: {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.with_requires_grad(false);
        }
        Ok(w)
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Result<GeneratorVars> {
        let fc = |f: &FcWeights<S>, tape: &mut Tape<S>| -> Result<FcVars> {
            Ok(FcVars {
                weight: tape.leaf(f.weight.clone().with_requires_grad(trainable))?,
                bias: tape.leaf(f.bias.clone().with_requires_grad(trainable))?,
            })
        };
        let mut mapping = Vec::new();
        for f in &self.mapping {
            mapping.push(fc(f, tape)?);
        }
        let constant = tape.leaf(self.constant.clone().with_requires_grad(trainable))?;
        let conv = |c: &ModConvWeights<S>, tape: &mut Tape<S>| -> Result<ModConvVars> {
            let weight = tape.leaf(c.weight.clone().with_requires_grad(trainable))?;
            let bias = tape.leaf(c.bias.clone().with_requires_grad(trainable))?;
            let style = fc(&c.style, tape)?;
            let noise_strength = match &c.noise_strength {
                Some(n) => Some(tape.leaf(n.clone().with_requires_grad(trainable))?),
                None => None,
            };
            Ok(ModConvVars {
                name: c.name.clone(),
                weight,
                bias,
                style,
                noise_strength,
            })
        };
        let mut convs = Vec::new();
        for c in &self.convs {
            convs.push(conv(c, tape)?);
        }
        let to_rgb = conv(&self.to_rgb, tape)?;
        Ok(GeneratorVars {
            demodulate: self.arch.demodulate,
            mapping,
            constant,
            convs,
            to_rgb,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FcVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Clone, Debug)]
pub struct ModConvVars {
    pub name: String,
    pub weight: Var,
    pub bias: Var,
    pub style: FcVars,
    pub noise_strength: Option<Var>,
}

/// Generator parameters bound to a tape.
#[derive(Clone, Debug)]
pub struct GeneratorVars {
    pub demodulate: bool,
    pub mapping: Vec<FcVars>,
    pub constant: Var,
    pub convs: Vec<ModConvVars>,
    pub to_rgb: ModConvVars,
}

impl GeneratorVars {
    /// Variables in the same order as [`GeneratorWeights::tensors_mut`].
    pub fn params(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for fc in &self.mapping {
            out.extend([fc.weight, fc.bias]);
        }
        out.push(self.constant);
        for c in self.convs.iter().chain(std::iter::once(&self.to_rgb)) {
            out.extend([c.weight, c.bias, c.style.weight, c.style.bias]);
            out.extend(c.noise_strength);
        }
        out
    }
}

/// Per-layer Gaussian noise maps `[n×h×w]` for one synthesis pass.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseBank<S: Scalar = f32> {
    pub maps: Vec<Tensor<S>>,
}

impl<S: Scalar> NoiseBank<S> {
    pub fn sample(arch: &ArchSpec, batch: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let maps = arch
            .synthesis_shapes()
            .into_iter()
            .map(|(b, _)| {
                let res = arch.blocks[b].resolution;
                Tensor::randn(vec![batch, res, res], 1.0, &mut rng)
            })
            .collect();
        Self { maps }
    }
}

/// `x · Wᵀ + b` with `W` optionally adapted.
fn fc_on<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    fc: FcVars,
    adapters: Option<&BoundAdapters>,
    layer: &str,
) -> Result<Var> {
    let w = match adapters {
        Some(a) => a.weight(tape, layer, fc.weight)?,
        None => fc.weight,
    };
    let wt = tape.transpose(w)?;
    let y = tape.matmul(x, wt)?;
    Ok(tape.add_bias(y, fc.bias)?)
}

/// Mapping network: a stack of FC + leaky ReLU(0.2) layers.
pub fn mapping_forward_on<S: Scalar>(
    tape: &mut Tape<S>,
    g: &GeneratorVars,
    adapters: Option<&BoundAdapters>,
    z: Var,
) -> Result<Var> {
    let mut h = z;
    for (i, fc) in g.mapping.iter().enumerate() {
        let y = fc_on(tape, h, *fc, adapters, &format!("map{i}"))?;
        h = tape.leaky_relu(y, S::from_f64_lossy(LEAKY_SLOPE))?;
    }
    Ok(h)
}

/// Modulated convolution up to (and excluding) noise, bias and activation.
pub fn modulated_conv_on<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    w: Var,
    conv: &ModConvVars,
    adapters: Option<&BoundAdapters>,
    demodulate: bool,
) -> Result<Var> {
    let st = tape.transpose(conv.style.weight)?;
    let s = tape.matmul(w, st)?;
    let s = tape.add_bias(s, conv.style.bias)?;
    let weight = match adapters {
        Some(a) => a.weight(tape, &conv.name, conv.weight)?,
        None => conv.weight,
    };
    let xm = tape.scale_channels(x, s)?;
    let y = tape.conv2d(xm, weight)?;
    if demodulate {
        let d = tape.demodulate(weight, s, S::from_f64_lossy(DEMOD_EPS))?;
        Ok(tape.scale_channels(y, d)?)
    } else {
        Ok(y)
    }
}

/// Synthesis network: learned constant, one modulated block per
/// resolution with noise injection, nearest upsampling between blocks and a
/// final ToRGB projection squashed by `tanh`.
pub fn synthesis_forward_on<S: Scalar>(
    tape: &mut Tape<S>,
    g: &GeneratorVars,
    adapters: Option<&BoundAdapters>,
    arch: &ArchSpec,
    w: Var,
    noise: &NoiseBank<S>,
) -> Result<Var> {
    let batch = tape.shape(w)[0];
    let mut x = tape.repeat_batch(g.constant, batch)?;
    let slope = S::from_f64_lossy(LEAKY_SLOPE);
    let shapes = arch.synthesis_shapes();
    for (i, ((block, _), conv)) in shapes.iter().zip(&g.convs).enumerate() {
        let first_of_block = i == 0 || shapes[i - 1].0 != *block;
        if first_of_block && *block > 0 {
            x = tape.upsample2x_nearest(x)?;
        }
        let mut y = modulated_conv_on(tape, x, w, conv, adapters, g.demodulate)?;
        if let Some(strength) = conv.noise_strength {
            y = tape.noise_inject(y, &noise.maps[i], strength)?;
        }
        y = tape.add_bias(y, conv.bias)?;
        x = tape.leaky_relu(y, slope)?;
    }
    let y = modulated_conv_on(tape, x, w, &g.to_rgb, adapters, false)?;
    let y = tape.add_bias(y, g.to_rgb.bias)?;
    Ok(tape.tanh(y)?)
}

fn check_adapters<S: Scalar>(arch: &ArchSpec, adapters: Option<&AdapterSet<S>>) -> Result<()> {
    if let Some(a) = adapters {
        let fp = arch.fingerprint();
        if fp != a.arch_fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: fp.to_hex(),
                found: a.arch_fingerprint.to_hex(),
            });
        }
    }
    Ok(())
}

/// `z[batch×z_dim] -> w[batch×w_dim]`.
pub fn mapping_forward<S: Scalar>(
    z: &Tensor<S>,
    weights: &GeneratorWeights<S>,
    adapters: Option<&AdapterSet<S>>,
) -> Result<Tensor<S>> {
    check_adapters(&weights.arch, adapters)?;
    let mut tape = Tape::new();
    let g = weights.bind(&mut tape, false)?;
    let bound = adapters.map(|a| a.bind(&mut tape, false)).transpose()?;
    let zv = tape.constant(z.clone())?;
    let out = mapping_forward_on(&mut tape, &g, bound.as_ref(), zv)?;
    Ok(tape.value(out).clone())
}

/// `w[batch×w_dim] -> images[batch×c×R×R]` in `[-1, 1]`.
pub fn synthesis_forward<S: Scalar>(
    w: &Tensor<S>,
    weights: &GeneratorWeights<S>,
    adapters: Option<&AdapterSet<S>>,
    noise_seed: u64,
) -> Result<Tensor<S>> {
    check_adapters(&weights.arch, adapters)?;
    let mut tape = Tape::new();
    let g = weights.bind(&mut tape, false)?;
    let bound = adapters.map(|a| a.bind(&mut tape, false)).transpose()?;
    let wv = tape.constant(w.clone())?;
    let noise = NoiseBank::sample(&weights.arch, w.shape()[0], noise_seed);
    let out = synthesis_forward_on(&mut tape, &g, bound.as_ref(), &weights.arch, wv, &noise)?;
    Ok(tape.value(out).clone())
}

/// Draws `count` latent vectors from `Normal(0, 1)`.
pub fn sample_latents<S: Scalar>(arch: &ArchSpec, count: usize, seed: u64) -> Tensor<S> {
    Tensor::randn(
        vec![count, arch.z_dim],
        1.0,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

/// Generates `count` images as individual `[c×R×R]` tensors, processing
/// `chunk` samples per pass. Deterministic in `(seed, chunk)`; noise maps
/// are drawn per pass, so a different `chunk` yields different samples.
pub fn generate_images<S: Scalar>(
    weights: &GeneratorWeights<S>,
    adapters: Option<&AdapterSet<S>>,
    count: usize,
    seed: u64,
    chunk: usize,
) -> Result<Vec<Tensor<S>>> {
    let z = sample_latents::<S>(&weights.arch, count, seed);
    let zd = z.data();
    let z_dim = weights.arch.z_dim;
    let mut out = Vec::with_capacity(count);
    let chunk = chunk.max(1);
    for (ci, start) in (0..count).step_by(chunk).enumerate() {
        let n = chunk.min(count - start);
        let zc = Tensor::new(
            vec![n, z_dim],
            zd[start * z_dim..(start + n) * z_dim].to_vec(),
        )?;
        let w = mapping_forward(&zc, weights, adapters)?;
        let noise_seed = seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(ci as u64 + 1);
        let imgs = synthesis_forward(&w, weights, adapters, noise_seed)?;
        out.extend(split_batch(&imgs));
    }
    Ok(out)
}

/// Splits `[n×…]` into `n` tensors of the trailing shape.
pub fn split_batch<S: Scalar>(batch: &Tensor<S>) -> Vec<Tensor<S>> {
    let shape = &batch.shape()[1..];
    let per: usize = shape.iter().product();
    batch
        .data()
        .chunks(per)
        .map(|c| Tensor::new(shape.to_vec(), c.to_vec()).expect("consistent shape"))
        .collect()
}

/// Stacks equally-shaped tensors along a new leading axis.
pub fn stack<S: Scalar>(items: &[&Tensor<S>]) -> Result<Tensor<S>> {
    let first = items
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot stack an empty list".into()))?;
    let mut shape = vec![items.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(first.numel() * items.len());
    for t in items {
        if t.shape() != first.shape() {
            return Err(Error::InvalidArgument(format!(
                "stack: shape {:?} vs {:?}",
                t.shape(),
                first.shape()
            )));
        }
        data.extend_from_slice(t.data());
    }
    Ok(Tensor::new(shape, data)?)
}
