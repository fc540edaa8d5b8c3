//! Perceptual proxy metrics and scaling-factor selection.
//!
//! A fixed random convolutional embedder stands in for pretrained
//! perceptual networks. Its pooled features feed the Fréchet distance and
//! its unit-normalised patch features feed the pairwise distance.

mod alpha;
mod embedder;
mod frechet;

pub use alpha::{
    auto_alphas, default_multiplier, select_alphas, AlphaChoice, MULTIPLIER_THRESHOLD,
};
pub use embedder::{
    pairwise_diversity, perceptual_distance, source_target_distance, Embedding, FeatureEmbedder,
    EMBEDDER_CHANNELS, EMBEDDER_SEED, FEATURE_DIM,
};
pub use frechet::{fit_stats, frechet_distance, image_stats, proxy_fid, sqrtm_psd, GaussStats};

/// Number of generated samples behind each proxy-FID.
pub const FID_SAMPLES: usize = 500;
/// Number of generated samples behind each diversity score.
pub const DIVERSITY_SAMPLES: usize = 100;
