use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;

fn one() -> usize {
    1
}

/// One resolution level of the synthesis network.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthesisBlock {
    pub resolution: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    /// Modulated convolutions at this resolution; the first maps
    /// `c_in -> c_out`, the rest `c_out -> c_out`.
    #[serde(default = "one")]
    pub convs: usize,
}

/// Declarative generator layout. The critic mirrors the synthesis blocks.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub z_dim: usize,
    pub w_dim: usize,
    pub mapping_layers: usize,
    pub mapping_width: usize,
    pub base_resolution: usize,
    pub img_channels: usize,
    pub blocks: Vec<SynthesisBlock>,
    #[serde(default)]
    pub demodulate: bool,
}

/// What kind of weight an adaptable layer carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Fc { d_in: usize, d_out: usize },
    Conv { c_in: usize, c_out: usize, k: usize },
}

impl LayerKind {
    pub fn min_dim(&self) -> usize {
        match *self {
            LayerKind::Fc { d_in, d_out } => d_in.min(d_out),
            LayerKind::Conv { c_in, c_out, .. } => c_in.min(c_out),
        }
    }

    /// Rank actually used on this layer: `r` capped at [`Self::min_dim`].
    pub fn capped_rank(&self, r: usize) -> usize {
        r.min(self.min_dim())
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        match *self {
            LayerKind::Fc { d_in, d_out } => vec![d_out, d_in],
            LayerKind::Conv { c_in, c_out, k } => vec![c_out, c_in, k, k],
        }
    }

    pub fn is_fc(&self) -> bool {
        matches!(self, LayerKind::Fc { .. })
    }
}

/// A named weight-carrying layer of the generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub kind: LayerKind,
}

/// A critic convolution: `c_in -> c_out` at `resolution`, followed by 2×
/// average pooling when `pool` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CriticBlock {
    pub resolution: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub pool: bool,
}

impl ArchSpec {
    /// Default desk-scale generator: 32×32 RGB output.
    pub fn desk() -> Self {
        Self {
            z_dim: 64,
            w_dim: 64,
            mapping_layers: 4,
            mapping_width: 64,
            base_resolution: 4,
            img_channels: 3,
            blocks: vec![
                block(4, 128, 128, 3, 1),
                block(8, 128, 128, 3, 1),
                block(16, 128, 64, 3, 1),
                block(32, 64, 32, 3, 1),
            ],
            demodulate: false,
        }
    }

    /// A reduced 16×16 layout that keeps single-core end-to-end runs to minutes.
    pub fn mini() -> Self {
        Self {
            z_dim: 32,
            w_dim: 32,
            mapping_layers: 2,
            mapping_width: 32,
            base_resolution: 4,
            img_channels: 3,
            blocks: vec![
                block(4, 16, 16, 3, 1),
                block(8, 16, 16, 3, 1),
                block(16, 16, 8, 3, 1),
            ],
            demodulate: false,
        }
    }

    /// Parameter-counting stand-in for a 256×256 StyleGAN2 generator
    /// (8×512 mapping, two convolutions per resolution above 4×4).
    pub fn stylegan2_256() -> Self {
        Self {
            z_dim: 512,
            w_dim: 512,
            mapping_layers: 8,
            mapping_width: 512,
            base_resolution: 4,
            img_channels: 3,
            blocks: vec![
                block(4, 512, 512, 3, 1),
                block(8, 512, 512, 3, 2),
                block(16, 512, 512, 3, 2),
                block(32, 512, 512, 3, 2),
                block(64, 512, 512, 3, 2),
                block(128, 512, 256, 3, 2),
                block(256, 256, 128, 3, 2),
            ],
            demodulate: true,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "desk" => Some(Self::desk()),
            "mini" => Some(Self::mini()),
            "stylegan2-256" => Some(Self::stylegan2_256()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("arch: {msg}")));
        if self.z_dim == 0 || self.w_dim == 0 || self.mapping_width == 0 || self.img_channels == 0 {
            return bad("dimensions must be positive".into());
        }
        if self.mapping_layers == 0 {
            return bad("mapping_layers must be at least 1".into());
        }
        if self.blocks.is_empty() {
            return bad("at least one synthesis block required".into());
        }
        let mut res = self.base_resolution;
        for (i, b) in self.blocks.iter().enumerate() {
            if b.resolution != res {
                return bad(format!(
                    "block {i} resolution {} (expected {res})",
                    b.resolution
                ));
            }
            if b.kernel % 2 == 0 {
                return bad(format!("block {i} kernel {} must be odd", b.kernel));
            }
            if b.c_in == 0 || b.c_out == 0 || b.convs == 0 {
                return bad(format!("block {i} has a zero extent"));
            }
            if i > 0 && b.c_in != self.blocks[i - 1].c_out {
                return bad(format!("block {i} c_in {} != previous c_out", b.c_in));
            }
            res *= 2;
        }
        Ok(())
    }

    pub fn resolution(&self) -> usize {
        self.blocks
            .last()
            .map(|b| b.resolution)
            .unwrap_or(self.base_resolution)
    }

    pub fn const_channels(&self) -> usize {
        self.blocks[0].c_in
    }

    pub fn mapping_shapes(&self) -> Vec<LayerShape> {
        (0..self.mapping_layers)
            .map(|i| {
                let d_in = if i == 0 {
                    self.z_dim
                } else {
                    self.mapping_width
                };
                let d_out = if i + 1 == self.mapping_layers {
                    self.w_dim
                } else {
                    self.mapping_width
                };
                LayerShape {
                    name: format!("map{i}"),
                    kind: LayerKind::Fc { d_in, d_out },
                }
            })
            .collect()
    }

    /// Synthesis convolutions in forward order, tagged with their block index.
    pub fn synthesis_shapes(&self) -> Vec<(usize, LayerShape)> {
        let mut out = Vec::new();
        for (b, blk) in self.blocks.iter().enumerate() {
            for j in 0..blk.convs {
                let c_in = if j == 0 { blk.c_in } else { blk.c_out };
                out.push((
                    b,
                    LayerShape {
                        name: format!("syn{b}.conv{j}"),
                        kind: LayerKind::Conv {
                            c_in,
                            c_out: blk.c_out,
                            k: blk.kernel,
                        },
                    },
                ));
            }
        }
        out
    }

    pub fn to_rgb_shape(&self) -> LayerShape {
        LayerShape {
            name: "torgb".into(),
            kind: LayerKind::Conv {
                c_in: self.blocks.last().expect("validated").c_out,
                c_out: self.img_channels,
                k: 1,
            },
        }
    }

    /// Layers that receive adapters: every mapping FC, every synthesis
    /// convolution and ToRGB. Affine style layers stay unadapted.
    pub fn adaptable_layers(&self) -> Vec<LayerShape> {
        let mut out = self.mapping_shapes();
        out.extend(self.synthesis_shapes().into_iter().map(|(_, s)| s));
        out.push(self.to_rgb_shape());
        out
    }

    pub fn critic_blocks(&self) -> Vec<CriticBlock> {
        self.blocks
            .iter()
            .rev()
            .map(|b| CriticBlock {
                resolution: b.resolution,
                c_in: b.c_out,
                c_out: b.c_in,
                kernel: b.kernel,
                pool: b.resolution > self.base_resolution,
            })
            .collect()
    }

    /// Exact count of frozen generator parameters, including biases, style
    /// affines, noise strengths and the constant input.
    pub fn base_param_count(&self) -> u64 {
        let mut total = 0u64;
        for l in self.mapping_shapes() {
            if let LayerKind::Fc { d_in, d_out } = l.kind {
                total += (d_out * d_in + d_out) as u64;
            }
        }
        let r0 = self.base_resolution;
        total += (self.const_channels() * r0 * r0) as u64;
        for (_, l) in self.synthesis_shapes() {
            if let LayerKind::Conv { c_in, c_out, k } = l.kind {
                total += (c_out * c_in * k * k + c_out + c_in * self.w_dim + c_in + 1) as u64;
            }
        }
        if let LayerKind::Conv { c_in, c_out, .. } = self.to_rgb_shape().kind {
            total += (c_out * c_in + c_out + c_in * self.w_dim + c_in) as u64;
        }
        total
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn fingerprint(&self) -> Fingerprint {
        let bytes = serde_json::to_vec(self).expect("arch serializes");
        Fingerprint(Sha256::digest(&bytes).into())
    }
}

fn block(
    resolution: usize,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    convs: usize,
) -> SynthesisBlock {
    SynthesisBlock {
        resolution,
        c_in,
        c_out,
        kernel,
        convs,
    }
}
