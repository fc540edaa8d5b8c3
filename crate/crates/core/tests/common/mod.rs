//! Independent reference implementations shared by the integration tests
//! and the acceptance runner. Nothing here calls into the library's
//! arithmetic; inputs are plain slices and outputs plain `Vec<f64>`.
#![allow(dead_code)]

pub mod checks;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

pub fn act(x: f64, kind: &str) -> f64 {
    match kind {
        "relu" => x.max(0.0),
        "leaky_relu" => {
            if x >= 0.0 {
                x
            } else {
                0.2 * x
            }
        }
        _ => x,
    }
}

/// `(α/r) Σ_s B[o,s] A[s,i]` by explicit loops; `b` is `[d_out×r]`, `a` is `[r×d_in]`.
pub fn fc_delta_oracle(
    b: &[f64],
    a: &[f64],
    d_out: usize,
    d_in: usize,
    r: usize,
    alpha: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; d_out * d_in];
    for o in 0..d_out {
        for i in 0..d_in {
            let mut acc = 0.0;
            for s in 0..r {
                acc += b[o * r + s] * a[s * d_in + i];
            }
            out[o * d_in + i] = alpha / r as f64 * acc;
        }
    }
    out
}

/// LoRA-in-LoRA delta by explicit loops.
///
/// `B[o,s,u,v] = act(Σ_t B′[o,t] M[t,s,u,v])`,
/// `Δ[o,i,u,v] = (α/r) act(Σ_s B[o,s,u,v] A[s,i])`.
#[allow(clippy::too_many_arguments)]
pub fn conv_delta_oracle(
    b_prime: &[f64],
    m: &[f64],
    a: &[f64],
    c_out: usize,
    c_in: usize,
    r: usize,
    k: usize,
    alpha: f64,
    activation: &str,
) -> Vec<f64> {
    let kk = k * k;
    let mut b = vec![0.0; c_out * r * kk];
    for o in 0..c_out {
        for s in 0..r {
            for uv in 0..kk {
                let mut acc = 0.0;
                for t in 0..r {
                    acc += b_prime[o * r + t] * m[(t * r + s) * kk + uv];
                }
                b[(o * r + s) * kk + uv] = act(acc, activation);
            }
        }
    }
    let mut out = vec![0.0; c_out * c_in * kk];
    for o in 0..c_out {
        for i in 0..c_in {
            for uv in 0..kk {
                let mut acc = 0.0;
                for s in 0..r {
                    acc += b[(o * r + s) * kk + uv] * a[s * c_in + i];
                }
                out[(o * c_in + i) * kk + uv] = alpha / r as f64 * act(acc, activation);
            }
        }
    }
    out
}

/// Symmetric matrix as row-major `Vec<f64>`.
pub type Sym = Vec<f64>;

/// Cyclic Jacobi eigendecomposition of a symmetric `n×n` matrix.
/// Returns `(eigenvalues, eigenvectors as columns, row-major)`.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum();
        let diag: f64 = (0..n).map(|i| m[i * n + i] * m[i * n + i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| m[i * n + i]).collect(), v)
}

pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            for j in 0..n {
                out[i * n + j] += aik * b[k * n + j];
            }
        }
    }
    out
}

/// Principal square root of a PSD matrix through [`jacobi_eigen`].
pub fn sqrt_psd(a: &[f64], n: usize) -> Vec<f64> {
    let (vals, vecs) = jacobi_eigen(a, n);
    let mut out = vec![0.0; n * n];
    for (k, &l) in vals.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] += s * vecs[i * n + k] * vecs[j * n + k];
            }
        }
    }
    out
}

/// `‖μ₁−μ₂‖² + tr Σ₁ + tr Σ₂ − 2 tr (Σ₁^½ Σ₂ Σ₁^½)^½`.
pub fn frechet_oracle(mu1: &[f64], c1: &[f64], mu2: &[f64], c2: &[f64]) -> f64 {
    let n = mu1.len();
    let diff: f64 = mu1.iter().zip(mu2).map(|(a, b)| (a - b) * (a - b)).sum();
    let tr = |m: &[f64]| (0..n).map(|i| m[i * n + i]).sum::<f64>();
    let s1 = sqrt_psd(c1, n);
    let mut inner = matmul(&matmul(&s1, c2, n), &s1, n);
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (inner[i * n + j] + inner[j * n + i]);
            inner[i * n + j] = avg;
            inner[j * n + i] = avg;
        }
    }
    let (vals, _) = jacobi_eigen(&inner, n);
    let tr_sqrt: f64 = vals.iter().map(|l| l.max(0.0).sqrt()).sum();
    diff + tr(c1) + tr(c2) - 2.0 * tr_sqrt
}

/// Random SPD matrix `G Gᵀ/n + εI`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let g = uniform_vec(rng, n * n, 1.0);
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += g[i * n + k] * g[j * n + k];
            }
            out[i * n + j] = acc / n as f64;
        }
        out[i * n + i] += 0.05;
    }
    out
}

/// Unbiased mean and covariance by explicit two-pass loops.
pub fn mean_cov_oracle(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len();
    let d = samples[0].len();
    let mut mu = vec![0.0; d];
    for s in samples {
        for (m, x) in mu.iter_mut().zip(s) {
            *m += x;
        }
    }
    for m in &mut mu {
        *m /= n as f64;
    }
    let mut cov = vec![0.0; d * d];
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (s[i] - mu[i]) * (s[j] - mu[j]);
            }
        }
    }
    for c in &mut cov {
        *c /= (n - 1) as f64;
    }
    (mu, cov)
}

/// Norm-based relative error `‖x−y‖ / max(‖x‖+‖y‖, tiny)`.
pub fn rel_err(x: &[f64], y: &[f64]) -> f64 {
    let num: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let den =
        x.iter().map(|a| a * a).sum::<f64>().sqrt() + y.iter().map(|b| b * b).sum::<f64>().sqrt();
    if den < 1e-300 {
        num
    } else {
        num / den
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn numeric_grad(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xs = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xs[i];
            xs[i] = orig + h;
            let up = f(&xs);
            xs[i] = orig - h;
            let down = f(&xs);
            xs[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// One row of the pinned α-ablation table.
#[derive(Debug, serde::Deserialize)]
pub struct AlphaRow {
    pub dataset: String,
    pub l_st: f64,
    pub m: u32,
    pub fid: f64,
    pub diversity: f64,
}

pub fn alpha_table() -> Vec<AlphaRow> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/alpha_table.csv");
    let mut reader = csv::Reader::from_path(path).expect("fixture present");
    reader
        .deserialize()
        .map(|r| r.expect("fixture row"))
        .collect()
}

/// `(dataset, l_st, m with the lowest FID)` in fixture order.
pub fn best_multipliers(rows: &[AlphaRow]) -> Vec<(String, f64, u32)> {
    let mut out: Vec<(String, f64, u32, f64)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|o| o.0 == r.dataset) {
            Some(o) if r.fid < o.3 => {
                o.2 = r.m;
                o.3 = r.fid;
            }
            Some(_) => {}
            None => out.push((r.dataset.clone(), r.l_st, r.m, r.fid)),
        }
    }
    out.into_iter().map(|(d, l, m, _)| (d, l, m)).collect()
}
