use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::adapter::AdapterSet;
use crate::error::{Error, Result};
use crate::networks::{generate_images, GeneratorWeights};
use crate::tensor::{Scalar, Tensor};

use super::embedder::FeatureEmbedder;

const EIG_EPS: f64 = 1e-15;
const EIG_MAX_ITER: usize = 10_000;

/// Gaussian fit of a feature cloud: mean and unbiased covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussStats {
    pub mean: Vec<f64>,
    /// Row-major `dim × dim`.
    pub cov: Vec<f64>,
    pub n: usize,
}

impl GaussStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim(), self.dim(), &self.cov)
    }
}

/// Sample mean and unbiased covariance (two-pass).
pub fn fit_stats(samples: &[Vec<f64>]) -> Result<GaussStats> {
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "fit_stats: need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let d = samples[0].len();
    if samples.iter().any(|s| s.len() != d) {
        return Err(Error::InvalidArgument("fit_stats: ragged samples".into()));
    }
    let n = samples.len();
    let mut mean = vec![0.0; d];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = vec![0.0; d * d];
    for s in samples {
        for i in 0..d {
            let di = s[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += di * (s[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[i * d + j] / (n - 1) as f64;
            cov[i * d + j] = v;
            cov[j * d + i] = v;
        }
    }
    Ok(GaussStats { mean, cov, n })
}

fn eigen(m: DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    SymmetricEigen::try_new(m, EIG_EPS, EIG_MAX_ITER).ok_or(Error::EigenNonConvergence)
}

/// Square root of a symmetric positive semi-definite matrix; negative
/// eigenvalues are clamped to zero.
pub fn sqrtm_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let e = eigen(sym)?;
    let roots = DVector::from_iterator(
        e.eigenvalues.len(),
        e.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    Ok(&e.eigenvectors * DMatrix::from_diagonal(&roots) * e.eigenvectors.transpose())
}

/// `‖μ₁−μ₂‖² + Tr(Σ₁ + Σ₂ − 2(Σ₁Σ₂)^{1/2})`, with the cross term taken as
/// `Tr((Σ₁^{1/2} Σ₂ Σ₁^{1/2})^{1/2})`.
pub fn frechet_distance(a: &GaussStats, b: &GaussStats) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::InvalidArgument(format!(
            "frechet_distance: dimension {} vs {}",
            a.dim(),
            b.dim()
        )));
    }
    let mean_sq: f64 = a
        .mean
        .iter()
        .zip(&b.mean)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let (s1, s2) = (a.cov_matrix(), b.cov_matrix());
    let r1 = sqrtm_psd(&s1)?;
    let inner = &r1 * &s2 * &r1;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross: f64 = eigen(inner)?
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .sum();
    let d = mean_sq + s1.trace() + s2.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// Feature statistics of a set of images under the standard embedder.
pub fn image_stats<S: Scalar>(imgs: &[Tensor<S>]) -> Result<GaussStats> {
    let e = FeatureEmbedder::standard();
    let feats = imgs
        .iter()
        .map(|i| e.embed(i).map(|x| x.features))
        .collect::<Result<Vec<_>>>()?;
    fit_stats(&feats)
}

/// Fréchet distance between `count` generated samples and `reference`.
pub fn proxy_fid(
    weights: &GeneratorWeights<f32>,
    adapters: Option<&AdapterSet<f32>>,
    reference: &GaussStats,
    count: usize,
    seed: u64,
) -> Result<f64> {
    let imgs = generate_images(weights, adapters, count, seed, 50)?;
    frechet_distance(&image_stats(&imgs)?, reference)
}
