use std::sync::OnceLock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::kernels::{avgpool2x, conv2d_forward, leaky_relu, ConvDims};
use crate::tensor::{Scalar, Tensor};

/// Seed of the embedder weights. Changing it changes every reported metric.
pub const EMBEDDER_SEED: u64 = 0x00C0_FFEE;
/// Channel widths of the three embedder convolutions.
pub const EMBEDDER_CHANNELS: [usize; 4] = [3, 16, 16, 32];
/// Length of the pooled feature vector (sum of layer widths).
pub const FEATURE_DIM: usize = 64;
const KERNEL: usize = 3;
const SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-10;

/// Per-image output of the embedder.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    /// Channel means of every layer, concatenated.
    pub features: Vec<f64>,
    /// Per layer: `[positions × channels]`, each row unit-normalised.
    pub patches: Vec<Vec<f64>>,
    pub channels: Vec<usize>,
}

impl Embedding {
    /// Mean over layers of the mean squared distance between aligned patches.
    pub fn distance(&self, other: &Embedding) -> Result<f64> {
        if self.patches.len() != other.patches.len()
            || self
                .patches
                .iter()
                .zip(&other.patches)
                .any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::InvalidArgument(
                "embeddings come from differently sized images".into(),
            ));
        }
        let mut total = 0.0;
        for ((pa, pb), &c) in self.patches.iter().zip(&other.patches).zip(&self.channels) {
            let positions = pa.len() / c;
            let sq: f64 = pa.iter().zip(pb).map(|(a, b)| (a - b) * (a - b)).sum();
            total += sq / positions as f64;
        }
        Ok(total / self.patches.len() as f64)
    }
}

/// Fixed random convolutional feature extractor evaluated in `f64`.
#[derive(Clone, Debug)]
pub struct FeatureEmbedder {
    weights: Vec<Vec<f64>>,
}

impl FeatureEmbedder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = EMBEDDER_CHANNELS
            .windows(2)
            .map(|w| {
                let fan_in = w[0] * KERNEL * KERNEL;
                Tensor::<f64>::randn(
                    vec![w[1], w[0], KERNEL, KERNEL],
                    (2.0 / fan_in as f64).sqrt(),
                    &mut rng,
                )
                .into_data()
            })
            .collect();
        Self { weights }
    }

    /// The shared instance built from [`EMBEDDER_SEED`].
    pub fn standard() -> &'static FeatureEmbedder {
        static CELL: OnceLock<FeatureEmbedder> = OnceLock::new();
        CELL.get_or_init(|| FeatureEmbedder::new(EMBEDDER_SEED))
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Embeds one `[c×h×w]` image with `c ∈ {1, 3}`; grey images are
    /// replicated across the three input channels.
    pub fn embed<S: Scalar>(&self, img: &Tensor<S>) -> Result<Embedding> {
        let s = img.shape();
        if s.len() != 3 || !(s[0] == 1 || s[0] == 3) || s[1] == 0 || s[2] == 0 {
            return Err(Error::InvalidArgument(format!(
                "embedder expects [1|3, h, w], got {s:?}"
            )));
        }
        let (h0, w0) = (s[1], s[2]);
        let mut x: Vec<f64> = if s[0] == 3 {
            img.data().iter().map(|v| v.as_f64()).collect()
        } else {
            let grey: Vec<f64> = img.data().iter().map(|v| v.as_f64()).collect();
            grey.repeat(3)
        };
        let (mut h, mut w) = (h0, w0);
        let mut features = Vec::with_capacity(FEATURE_DIM);
        let mut patches = Vec::with_capacity(self.weights.len());
        let mut channels = Vec::with_capacity(self.weights.len());
        for (l, wt) in self.weights.iter().enumerate() {
            let (c_in, c_out) = (EMBEDDER_CHANNELS[l], EMBEDDER_CHANNELS[l + 1]);
            let dims = ConvDims {
                batch: 1,
                c_in,
                c_out,
                h,
                w,
                k: KERNEL,
            };
            let mut y = conv2d_forward(&x, wt, dims);
            for v in &mut y {
                *v = leaky_relu(*v, SLOPE);
            }
            let hw = h * w;
            for c in 0..c_out {
                features.push(y[c * hw..(c + 1) * hw].iter().sum::<f64>() / hw as f64);
            }
            let mut p = vec![0.0; hw * c_out];
            for pos in 0..hw {
                let norm = (0..c_out)
                    .map(|c| y[c * hw + pos].powi(2))
                    .sum::<f64>()
                    .sqrt();
                for c in 0..c_out {
                    p[pos * c_out + c] = y[c * hw + pos] / (norm + NORM_EPS);
                }
            }
            patches.push(p);
            channels.push(c_out);
            if h >= 2 && w >= 2 && h % 2 == 0 && w % 2 == 0 {
                x = avgpool2x(&y, c_out, h, w);
                h /= 2;
                w /= 2;
            } else {
                x = y;
            }
        }
        Ok(Embedding {
            features,
            patches,
            channels,
        })
    }

    pub fn embed_all<S: Scalar>(&self, imgs: &[Tensor<S>]) -> Result<Vec<Embedding>> {
        imgs.iter().map(|i| self.embed(i)).collect()
    }
}

/// Patch-feature distance between two equally shaped images.
pub fn perceptual_distance<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidArgument(format!(
            "perceptual_distance: shape {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let e = FeatureEmbedder::standard();
    e.embed(a)?.distance(&e.embed(b)?)
}

/// Mean perceptual distance over all `(source, target)` pairs.
pub fn source_target_distance<S: Scalar>(
    source: &[Tensor<S>],
    target: &[Tensor<S>],
) -> Result<f64> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidArgument(
            "source_target_distance: empty sample set".into(),
        ));
    }
    let e = FeatureEmbedder::standard();
    let (es, et) = (e.embed_all(source)?, e.embed_all(target)?);
    let mut total = 0.0;
    for a in &es {
        for b in &et {
            total += a.distance(b)?;
        }
    }
    Ok(total / (es.len() * et.len()) as f64)
}

/// Mean perceptual distance over all unordered pairs of distinct samples.
pub fn pairwise_diversity<S: Scalar>(samples: &[Tensor<S>]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(
            "pairwise_diversity: need at least 2 samples".into(),
        ));
    }
    let emb = FeatureEmbedder::standard().embed_all(samples)?;
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..emb.len() {
        for j in i + 1..emb.len() {
            total += emb[i].distance(&emb[j])?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}
