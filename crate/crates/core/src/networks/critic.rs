use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::arch::ArchSpec;
use super::generator::{FcVars, FcWeights};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvWeights<S: Scalar = f32> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

/// Wasserstein critic: 1×1 FromRGB, the synthesis blocks mirrored with 2×
/// average pooling between resolutions, a spatial mean and a linear head.
///
/// Stored weights live in `[−clip, clip]`; each layer multiplies its
/// weights by `1/(clip·√fan_in)` at runtime so a saturated layer has unit
/// gain instead of shrinking the signal by `clip·√fan_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct CriticWeights<S: Scalar = f32> {
    pub clip: f64,
    pub resolution: usize,
    pub img_channels: usize,
    pub from_rgb: ConvWeights<S>,
    pub blocks: Vec<ConvWeights<S>>,
    pub pools: Vec<bool>,
    pub head: FcWeights<S>,
}

fn conv_init<S: Scalar>(
    c_in: usize,
    c_out: usize,
    k: usize,
    clip: f64,
    rng: &mut ChaCha8Rng,
) -> ConvWeights<S> {
    ConvWeights {
        weight: Tensor::uniform(vec![c_out, c_in, k, k], clip, rng),
        bias: Tensor::zeros(vec![c_out]),
    }
}

fn gain(clip: f64, fan_in: usize) -> f64 {
    1.0 / (clip * (fan_in as f64).sqrt())
}

impl<S: Scalar> CriticWeights<S> {
    /// Weights uniform in `[−clip, clip]`, biases zero.
    pub fn init(arch: &ArchSpec, clip: f64, seed: u64) -> Result<Self> {
        arch.validate()?;
        if !(clip > 0.0 && clip.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "critic clip must be positive, got {clip}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let specs = arch.critic_blocks();
        let from_rgb = conv_init(arch.img_channels, specs[0].c_in, 1, clip, &mut rng);
        let blocks = specs
            .iter()
            .map(|b| conv_init(b.c_in, b.c_out, b.kernel, clip, &mut rng))
            .collect();
        let width = specs.last().expect("non-empty").c_out;
        let head = FcWeights {
            weight: Tensor::uniform(vec![1, width], clip, &mut rng),
            bias: Tensor::zeros(vec![1]),
        };
        Ok(Self {
            clip,
            resolution: arch.resolution(),
            img_channels: arch.img_channels,
            from_rgb,
            blocks,
            pools: specs.iter().map(|b| b.pool).collect(),
            head,
        })
    }

    /// Every weight and bias set to zero.
    pub fn zeroed(mut self) -> Self {
        for t in self.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = S::zero());
        }
        self
    }

    pub fn tensors(&self) -> Vec<&Tensor<S>> {
        let mut out = vec![&self.from_rgb.weight, &self.from_rgb.bias];
        for b in &self.blocks {
            out.extend([&b.weight, &b.bias]);
        }
        out.extend([&self.head.weight, &self.head.bias]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = vec![&mut self.from_rgb.weight, &mut self.from_rgb.bias];
        for b in &mut self.blocks {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn bind(&self, tape: &mut Tape<S>, trainable: bool) -> Result<CriticVars> {
        let mut leaf = |t: &Tensor<S>| tape.leaf(t.clone().with_requires_grad(trainable));
        let from_rgb = (leaf(&self.from_rgb.weight)?, leaf(&self.from_rgb.bias)?);
        let mut blocks = Vec::new();
        for b in &self.blocks {
            blocks.push((leaf(&b.weight)?, leaf(&b.bias)?));
        }
        let head = FcVars {
            weight: leaf(&self.head.weight)?,
            bias: leaf(&self.head.bias)?,
        };
        let fan_in = |w: &Tensor<S>| w.numel() / w.shape()[0];
        let mut gains = vec![fan_in(&self.from_rgb.weight)];
        gains.extend(self.blocks.iter().map(|b| fan_in(&b.weight)));
        gains.push(fan_in(&self.head.weight));
        Ok(CriticVars {
            gains: gains.into_iter().map(|f| gain(self.clip, f)).collect(),
            resolution: self.resolution,
            img_channels: self.img_channels,
            from_rgb,
            blocks,
            pools: self.pools.clone(),
            head,
        })
    }
}

#[derive(Clone, Debug)]
pub struct CriticVars {
    /// Runtime weight gains: FromRGB, each block, head.
    gains: Vec<f64>,
    resolution: usize,
    img_channels: usize,
    from_rgb: (Var, Var),
    blocks: Vec<(Var, Var)>,
    pools: Vec<bool>,
    head: FcVars,
}

impl CriticVars {
    /// Variables in the same order as [`CriticWeights::tensors_mut`].
    pub fn params(&self) -> Vec<Var> {
        let mut out = vec![self.from_rgb.0, self.from_rgb.1];
        for (w, b) in &self.blocks {
            out.extend([*w, *b]);
        }
        out.extend([self.head.weight, self.head.bias]);
        out
    }
}

/// Unbounded per-sample scores `[n×1]`.
pub fn critic_forward_on<S: Scalar>(tape: &mut Tape<S>, c: &CriticVars, img: Var) -> Result<Var> {
    let shape = tape.shape(img).to_vec();
    if shape.len() != 4
        || shape[1] != c.img_channels
        || shape[2] != c.resolution
        || shape[3] != c.resolution
    {
        return Err(Error::InvalidArgument(format!(
            "critic expects [n, {}, {r}, {r}], got {shape:?}",
            c.img_channels,
            r = c.resolution
        )));
    }
    let slope = S::from_f64_lossy(LEAKY_SLOPE);
    let g = |i: usize| S::from_f64_lossy(c.gains[i]);
    let y = tape.conv2d(img, c.from_rgb.0)?;
    let y = tape.scale(y, g(0))?;
    let y = tape.add_bias(y, c.from_rgb.1)?;
    let mut x = tape.leaky_relu(y, slope)?;
    for (i, ((w, b), &pool)) in c.blocks.iter().zip(&c.pools).enumerate() {
        let y = tape.conv2d(x, *w)?;
        let y = tape.scale(y, g(i + 1))?;
        let y = tape.add_bias(y, *b)?;
        x = tape.leaky_relu(y, slope)?;
        if pool {
            x = tape.avgpool2x(x)?;
        }
    }
    let feat = tape.spatial_mean(x)?;
    let ht = tape.transpose(c.head.weight)?;
    let score = tape.matmul(feat, ht)?;
    let score = tape.scale(score, g(c.gains.len() - 1))?;
    Ok(tape.add_bias(score, c.head.bias)?)
}

pub fn critic_forward<S: Scalar>(img: &Tensor<S>, weights: &CriticWeights<S>) -> Result<Tensor<S>> {
    let mut tape = Tape::new();
    let c = weights.bind(&mut tape, false)?;
    let x = tape.constant(img.clone())?;
    let out = critic_forward_on(&mut tape, &c, x)?;
    Ok(tape.value(out).clone())
}
