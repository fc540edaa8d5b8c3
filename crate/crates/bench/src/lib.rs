//! Deterministic inputs shared by the benchmarks.

use colora_core::adapter::{init_adapter_set, AdapterConfig};
use colora_core::metrics::{fit_stats, GaussStats};
use colora_core::{AdapterSet, ArchSpec, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `(x[batch×c×h×w], w[c×c×k×k])`.
pub fn conv_inputs(batch: usize, c: usize, hw: usize, k: usize) -> (Tensor<f32>, Tensor<f32>) {
    let mut r = rng(1);
    (
        Tensor::randn(vec![batch, c, hw, hw], 1.0, &mut r),
        Tensor::randn(vec![c, c, k, k], 0.05, &mut r),
    )
}

/// Desk-arch adapters with every factor non-zero.
pub fn dense_adapters(rank: usize) -> AdapterSet<f32> {
    let mut set = init_adapter_set(&ArchSpec::desk(), AdapterConfig::new(rank, 1.0, 0.5), 2)
        .expect("valid rank");
    let mut r = rng(3);
    for t in set.tensors_mut() {
        *t = Tensor::randn(t.shape().to_vec(), 0.1, &mut r);
    }
    set
}

/// Two Gaussian fits of random 64-d clouds.
pub fn stats_pair(n: usize) -> (GaussStats, GaussStats) {
    let mut r = rng(4);
    let mut cloud = |shift: f64| -> GaussStats {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                Tensor::<f64>::randn(vec![64], 1.0, &mut r)
                    .into_data()
                    .into_iter()
                    .map(|v| v + shift)
                    .collect()
            })
            .collect();
        fit_stats(&rows).expect("n >= 2")
    };
    (cloud(0.0), cloud(0.3))
}
