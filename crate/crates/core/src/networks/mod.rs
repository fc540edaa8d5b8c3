//! StyleGAN2-style generator and Wasserstein critic.

mod arch;
mod critic;
mod generator;

pub use arch::{ArchSpec, CriticBlock, LayerKind, LayerShape, SynthesisBlock};
pub use critic::{critic_forward, critic_forward_on, ConvWeights, CriticVars, CriticWeights};
pub use generator::{
    generate_images, mapping_forward, mapping_forward_on, modulated_conv_on, sample_latents,
    split_batch, stack, synthesis_forward, synthesis_forward_on, FcVars, FcWeights, GeneratorVars,
    GeneratorWeights, ModConvVars, ModConvWeights, NoiseBank,
};
