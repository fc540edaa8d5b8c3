//! Wasserstein GAN training with weight clipping and Adam.
//!
//! Two entry points share one loop: [`train_base`] optimizes every generator
//! weight from scratch, [`train_adaptation`] keeps the generator frozen and
//! optimizes only a fresh [`AdapterSet`]. In both cases a new critic is
//! trained alongside, `n_critic` critic updates per generator update.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::{init_adapter_set, AdapterConfig, AdapterSet};
use crate::error::{Error, Result};
use crate::networks::{
    critic_forward_on, mapping_forward_on, stack, synthesis_forward_on, CriticWeights,
    GeneratorWeights, NoiseBank,
};
use crate::tensor::{Scalar, Tape, Tensor, TensorError, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Generator updates.
    pub iterations: usize,
    pub n_critic: usize,
    /// Critic weight-clipping bound.
    pub clip: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Progress-log period in iterations.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.002,
            batch_size: 4,
            iterations: 1500,
            n_critic: 5,
            clip: 0.01,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
            seed: 0,
            log_every: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("clip", self.clip),
            ("eps", self.eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "train.{name} must be positive, got {v}"
                )));
            }
        }
        if self.batch_size == 0 || self.n_critic == 0 || self.log_every == 0 {
            return Err(Error::Config(
                "train: batch_size, n_critic and log_every must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("train: betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<S: Scalar = f32> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &[&mut Tensor<S>]) -> Self {
        let zeros = || params.iter().map(|p| vec![S::zero(); p.numel()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One bias-corrected Adam update. `None` gradients count as zero.
/// Non-finite gradients abort the step before any parameter changes.
pub fn adam_step<S: Scalar>(
    state: &mut AdamState<S>,
    params: &mut [&mut Tensor<S>],
    grads: &[Option<&[S]>],
    hp: AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if let Some(g) = g {
            if g.len() != p.numel() {
                return Err(Error::InvalidArgument(
                    "adam_step: gradient length mismatch".into(),
                ));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(TensorError::NonFinite { op: "adam_step" }.into());
            }
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    let (b1, b2) = (S::from_f64_lossy(hp.beta1), S::from_f64_lossy(hp.beta2));
    let (one_b1, one_b2) = (
        S::from_f64_lossy(1.0 - hp.beta1),
        S::from_f64_lossy(1.0 - hp.beta2),
    );
    let (c1, c2) = (S::from_f64_lossy(c1), S::from_f64_lossy(c2));
    let (lr, eps) = (S::from_f64_lossy(hp.lr), S::from_f64_lossy(hp.eps));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let data = p.data_mut();
        for j in 0..data.len() {
            let gj = g.map_or(S::zero(), |g| g[j]);
            m[j] = b1 * m[j] + one_b1 * gj;
            v[j] = b2 * v[j] + one_b2 * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            data[j] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Clamps every scalar to `[-c, c]`.
pub fn clip_weights<S: Scalar>(params: &mut [&mut Tensor<S>], c: f64) {
    let (lo, hi) = (S::from_f64_lossy(-c), S::from_f64_lossy(c));
    for p in params.iter_mut() {
        for v in p.data_mut() {
            *v = v.max(lo).min(hi);
        }
    }
}

/// `(mean(fake) − mean(real), −mean(fake))`.
pub fn wgan_losses<S: Scalar>(
    real_scores: &Tensor<S>,
    fake_scores: &Tensor<S>,
) -> Result<(f64, f64)> {
    let (nr, nf) = (real_scores.shape()[0], fake_scores.shape()[0]);
    if nr == 0 || nf == 0 {
        return Err(Error::InvalidArgument("wgan_losses: empty batch".into()));
    }
    if nr != nf {
        return Err(Error::InvalidArgument(format!(
            "wgan_losses: batch {nr} vs {nf}"
        )));
    }
    let mean = |t: &Tensor<S>| t.data().iter().map(|v| v.as_f64()).sum::<f64>() / t.numel() as f64;
    let (mr, mf) = (mean(real_scores), mean(fake_scores));
    Ok((mf - mr, -mf))
}

/// One row of the training progress log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProgressRow {
    pub iteration: usize,
    pub loss_critic: f64,
    pub loss_gen: f64,
    pub wall_ms: u64,
}

pub const PROGRESS_HEADER: &str = "iteration,loss_critic,loss_gen,wall_ms";

pub fn write_progress<W: Write>(mut out: W, rows: &[ProgressRow]) -> std::io::Result<()> {
    writeln!(out, "{PROGRESS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.iteration,
            crate::report::fmt_sig6(r.loss_critic),
            crate::report::fmt_sig6(r.loss_gen),
            r.wall_ms
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct AdaptOutcome {
    pub adapters: AdapterSet<f32>,
    pub log: Vec<ProgressRow>,
}

#[derive(Clone, Debug)]
pub struct BaseOutcome {
    pub weights: GeneratorWeights<f32>,
    pub log: Vec<ProgressRow>,
}

enum GenSide<'a> {
    Base(&'a mut GeneratorWeights<f32>),
    Adapt {
        base: &'a GeneratorWeights<f32>,
        adapters: &'a mut AdapterSet<f32>,
    },
}

impl GenSide<'_> {
    fn weights(&self) -> &GeneratorWeights<f32> {
        match self {
            GenSide::Base(w) => w,
            GenSide::Adapt { base, .. } => base,
        }
    }

    /// Records `G(z)` on `tape`; returns the images and, when `train` is set,
    /// the trainable generator-side variables.
    fn forward(
        &self,
        tape: &mut Tape<f32>,
        z: Tensor<f32>,
        noise_seed: u64,
        train: bool,
    ) -> Result<(Var, Vec<Var>)> {
        let arch = &self.weights().arch;
        let batch = z.shape()[0];
        let noise = NoiseBank::sample(arch, batch, noise_seed);
        let zv = tape.constant(z)?;
        match self {
            GenSide::Base(w) => {
                let g = w.bind(tape, train)?;
                let wv = mapping_forward_on(tape, &g, None, zv)?;
                let img = synthesis_forward_on(tape, &g, None, arch, wv, &noise)?;
                Ok((img, if train { g.params() } else { Vec::new() }))
            }
            GenSide::Adapt { base, adapters } => {
                let g = base.bind(tape, false)?;
                let a = adapters.bind(tape, train)?;
                let wv = mapping_forward_on(tape, &g, Some(&a), zv)?;
                let img = synthesis_forward_on(tape, &g, Some(&a), arch, wv, &noise)?;
                Ok((img, if train { a.params() } else { Vec::new() }))
            }
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<f32>> {
        match self {
            GenSide::Base(w) => w.tensors_mut(),
            GenSide::Adapt { adapters, .. } => adapters.tensors_mut(),
        }
    }
}

fn sample_real(data: &[Tensor<f32>], batch: usize, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    let picks: Vec<&Tensor<f32>> = (0..batch)
        .map(|_| &data[rng.gen_range(0..data.len())])
        .collect();
    stack(&picks)
}

fn scalar_of(tape: &Tape<f32>, v: Var) -> f64 {
    tape.value(v).data()[0] as f64
}

fn run_wgan(
    mut side: GenSide<'_>,
    data: &[Tensor<f32>],
    cfg: &TrainConfig,
    critic_seed: u64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ProgressRow>> {
    cfg.validate()?;
    let arch = side.weights().arch.clone();
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let expected = [arch.img_channels, arch.resolution(), arch.resolution()];
    if let Some(bad) = data.iter().find(|t| t.shape() != expected) {
        return Err(Error::InvalidArgument(format!(
            "training image shape {:?}, expected {expected:?}",
            bad.shape()
        )));
    }
    let mut critic = CriticWeights::<f32>::init(&arch, cfg.clip, critic_seed)?;
    clip_weights(&mut critic.tensors_mut(), cfg.clip);
    let mut critic_opt = AdamState::new(&critic.tensors_mut());
    let mut gen_opt = AdamState::new(&side.params_mut());
    let hp = cfg.adam();
    let started = Instant::now();
    let mut log = Vec::new();
    let (mut loss_c, mut loss_g) = (0.0, 0.0);

    for it in 0..cfg.iterations {
        let wrap = |e: Error, lc: f64, lg: f64| match e {
            Error::Tensor(TensorError::NonFinite { op }) => Error::Numerical {
                iteration: it,
                loss_critic: lc,
                loss_gen: lg,
                detail: format!("non-finite value in {op}"),
            },
            other => other,
        };
        for _ in 0..cfg.n_critic {
            let mut step = || -> Result<f64> {
                let real = sample_real(data, cfg.batch_size, rng)?;
                let z = Tensor::randn(vec![cfg.batch_size, arch.z_dim], 1.0, rng);
                let noise_seed = rng.next_u64();
                let mut tape = Tape::new();
                let (fake, _) = side.forward(&mut tape, z, noise_seed, false)?;
                let c = critic.bind(&mut tape, true)?;
                let rv = tape.constant(real)?;
                let sr = critic_forward_on(&mut tape, &c, rv)?;
                let sf = critic_forward_on(&mut tape, &c, fake)?;
                let mr = tape.mean(sr)?;
                let mf = tape.mean(sf)?;
                let loss = tape.sub(mf, mr)?;
                tape.backward(loss)?;
                let grads: Vec<Option<&[f32]>> = c.params().iter().map(|&v| tape.grad(v)).collect();
                adam_step(&mut critic_opt, &mut critic.tensors_mut(), &grads, hp)?;
                clip_weights(&mut critic.tensors_mut(), cfg.clip);
                Ok(scalar_of(&tape, loss))
            };
            loss_c = step().map_err(|e| wrap(e, loss_c, loss_g))?;
        }
        let mut step = || -> Result<f64> {
            let z = Tensor::randn(vec![cfg.batch_size, arch.z_dim], 1.0, rng);
            let noise_seed = rng.next_u64();
            let mut tape = Tape::new();
            let (fake, gvars) = side.forward(&mut tape, z, noise_seed, true)?;
            let c = critic.bind(&mut tape, false)?;
            let sf = critic_forward_on(&mut tape, &c, fake)?;
            let mf = tape.mean(sf)?;
            let loss = tape.scale(mf, -1.0)?;
            tape.backward(loss)?;
            let grads: Vec<Option<&[f32]>> = gvars.iter().map(|&v| tape.grad(v)).collect();
            adam_step(&mut gen_opt, &mut side.params_mut(), &grads, hp)?;
            Ok(scalar_of(&tape, loss))
        };
        loss_g = step().map_err(|e| wrap(e, loss_c, loss_g))?;
        if it % cfg.log_every == 0 || it + 1 == cfg.iterations {
            let row = ProgressRow {
                iteration: it,
                loss_critic: loss_c,
                loss_gen: loss_g,
                wall_ms: started.elapsed().as_millis() as u64,
            };
            log::debug!("iter {it}: loss_critic={loss_c:.6} loss_gen={loss_g:.6}");
            log.push(row);
        }
    }
    Ok(log)
}

/// Trains a fresh adapter set (and a fresh critic) on `data` while `base`
/// stays frozen. With zero iterations the initial zero-delta set is returned.
pub fn train_adaptation(
    base: &GeneratorWeights<f32>,
    data: &[Tensor<f32>],
    cfg: &TrainConfig,
    adapter_cfg: AdapterConfig,
) -> Result<AdaptOutcome> {
    let before = base.fingerprint();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adapter_seed = rng.next_u64();
    let critic_seed = rng.next_u64();
    let mut adapters = init_adapter_set::<f32>(&base.arch, adapter_cfg, adapter_seed)?;
    let log = run_wgan(
        GenSide::Adapt {
            base,
            adapters: &mut adapters,
        },
        data,
        cfg,
        critic_seed,
        &mut rng,
    )?;
    debug_assert_eq!(before, base.fingerprint());
    Ok(AdaptOutcome { adapters, log })
}

/// Trains a generator from scratch on the source set.
pub fn train_base(
    arch: &crate::networks::ArchSpec,
    data: &[Tensor<f32>],
    cfg: &TrainConfig,
) -> Result<BaseOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gen_seed = rng.next_u64();
    let critic_seed = rng.next_u64();
    let mut weights = GeneratorWeights::<f32>::init(arch, gen_seed)?;
    let log = run_wgan(
        GenSide::Base(&mut weights),
        data,
        cfg,
        critic_seed,
        &mut rng,
    )?;
    Ok(BaseOutcome { weights, log })
}
