//! Criterion-level checks that exercise the library against the oracles in
//! the parent module. Each returns a short summary or a failure message.
#![allow(dead_code)]

use std::path::Path;

use colora_core::adapter::{conv_delta_on, llora_conv_delta, lora_fc_delta, merged_weight};
use colora_core::metrics::{fit_stats, frechet_distance, GaussStats};
use colora_core::networks::{generate_images, mapping_forward, sample_latents};
use colora_core::registry::checkpoint::{self, CheckpointHeader, HEADER_LEN};
use colora_core::{
    init_adapter_set, Activation, AdapterConfig, AdapterSet, ArchSpec, Error, Fingerprint,
    GeneratorWeights, LLoraConvAdapter, LayerAdapter, LoraFcAdapter, Placement, Scalar, Tape,
    Tensor, Var,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::*;

pub type Check = Result<String, String>;

fn to_f64<S: Scalar>(t: &Tensor<S>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

fn tensor<S: Scalar>(shape: Vec<usize>, data: &[f64]) -> Tensor<S> {
    Tensor::new(shape, data.iter().map(|&v| S::from_f64_lossy(v)).collect()).expect("shape matches")
}

fn activation_of(i: usize) -> (Activation, &'static str) {
    match i % 3 {
        0 => (Activation::Relu, "relu"),
        1 => (Activation::LeakyRelu, "leaky_relu"),
        _ => (Activation::None, "none"),
    }
}

/// Max abs deviation of both delta constructors from the loop oracles over
/// `cases` random shapes with `r ≤ 4`, dims ≤ 16. Returns `(max_fc, max_conv)`.
pub fn adapter_oracle_max_diff<S: Scalar>(cases: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let (mut worst_fc, mut worst_conv) = (0.0f64, 0.0f64);
    for case in 0..cases {
        let r = rng.gen_range(1..=4);
        let alpha = rng.gen_range(0.1..4.0);

        let (d_out, d_in) = (rng.gen_range(r..=16), rng.gen_range(r..=16));
        let b = round_to::<S>(uniform_vec(&mut rng, d_out * r, 1.0));
        let a = round_to::<S>(uniform_vec(&mut rng, r * d_in, 1.0));
        let fc = LoraFcAdapter::<S> {
            b: tensor(vec![d_out, r], &b),
            a: tensor(vec![r, d_in], &a),
            alpha,
            rank: r,
        };
        let got = to_f64(&lora_fc_delta(&fc).expect("valid fc adapter"));
        let want = fc_delta_oracle(&b, &a, d_out, d_in, r, alpha);
        worst_fc = worst_fc.max(max_abs(&got, &want));

        let (c_out, c_in) = (rng.gen_range(r..=16), rng.gen_range(r..=16));
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let (act, act_name) = activation_of(case);
        let bp = round_to::<S>(uniform_vec(&mut rng, c_out * r, 1.0));
        let m = round_to::<S>(uniform_vec(&mut rng, r * r * k * k, 1.0));
        let a = round_to::<S>(uniform_vec(&mut rng, r * c_in, 1.0));
        let conv = LLoraConvAdapter::<S> {
            b_prime: tensor(vec![c_out, r], &bp),
            m_inst: tensor(vec![r, r, k, k], &m),
            a: tensor(vec![r, c_in], &a),
            alpha,
            rank: r,
            activation: act,
        };
        let got = to_f64(&llora_conv_delta(&conv).expect("valid conv adapter"));
        let want = conv_delta_oracle(&bp, &m, &a, c_out, c_in, r, k, alpha, act_name);
        worst_conv = worst_conv.max(max_abs(&got, &want));
    }
    (worst_fc, worst_conv)
}

fn round_to<S: Scalar>(v: Vec<f64>) -> Vec<f64> {
    v.into_iter()
        .map(|x| S::from_f64_lossy(x).as_f64())
        .collect()
}

pub fn max_abs(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

pub fn adapter_oracle(cases: usize) -> Check {
    let (fc32, conv32) = adapter_oracle_max_diff::<f32>(cases, 0xA11CE);
    let (fc64, conv64) = adapter_oracle_max_diff::<f64>(cases, 0xB0B);
    let msg = format!(
        "{cases} shapes; f32 max diff fc {fc32:.2e} conv {conv32:.2e}; f64 fc {fc64:.2e} conv {conv64:.2e}"
    );
    if fc32 < 1e-6 && conv32 < 1e-6 && fc64 < 1e-12 && conv64 < 1e-12 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Every adaptable layer's merged weight and the whole generator output are
/// bit-identical to the base right after initialization.
pub fn zero_init_identity(arch: &ArchSpec, seeds: &[u64]) -> Check {
    let base = GeneratorWeights::<f32>::init(arch, 7).map_err(|e| e.to_string())?;
    let named: std::collections::HashMap<String, Tensor<f32>> = base
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let mut layers_checked = 0;
    for &seed in seeds {
        for (i, placement) in [Placement::Both, Placement::FcOnly, Placement::ConvOnly]
            .into_iter()
            .enumerate()
        {
            let (activation, _) = activation_of(i + seed as usize);
            let cfg = AdapterConfig {
                rank: 1 + (seed as usize % 4),
                alpha_fc: 1.7,
                alpha_conv: 0.3,
                activation,
                placement,
            };
            let set: AdapterSet<f32> =
                init_adapter_set(arch, cfg, seed).map_err(|e| e.to_string())?;
            for (name, ad) in &set.layers {
                let w = &named[&format!("{name}.weight")];
                let merged = merged_weight(w, ad).map_err(|e| e.to_string())?;
                if !merged.bit_eq(w) {
                    return Err(format!("layer {name} changed at init (seed {seed})"));
                }
                layers_checked += 1;
            }
            let z = sample_latents::<f32>(arch, 3, seed);
            let wa = mapping_forward(&z, &base, Some(&set)).map_err(|e| e.to_string())?;
            let wb = mapping_forward(&z, &base, None).map_err(|e| e.to_string())?;
            if !wa.bit_eq(&wb) {
                return Err(format!(
                    "mapping output differs (seed {seed}, {})",
                    placement.name()
                ));
            }
            let ia = generate_images(&base, Some(&set), 3, seed, 3).map_err(|e| e.to_string())?;
            let ib = generate_images(&base, None, 3, seed, 3).map_err(|e| e.to_string())?;
            if ia.iter().zip(&ib).any(|(x, y)| !x.bit_eq(y)) {
                return Err(format!(
                    "generator output differs (seed {seed}, {})",
                    placement.name()
                ));
            }
        }
    }
    Ok(format!(
        "{layers_checked} layer merges and {} forward passes exact",
        seeds.len() * 3 * 2
    ))
}

/// A gradient-check case: input tensors and a graph from leaves to output.
pub struct GradCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>,
}

fn loss_weights(n: usize) -> Vec<f64> {
    let mut rng = rng(0x5EED ^ n as u64);
    uniform_vec(&mut rng, n, 1.0)
}

fn weighted_loss(case: &GradCase, inputs: &[Tensor<f64>], track: bool) -> (f64, Vec<Vec<f64>>) {
    let mut tape = Tape::<f64>::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| {
            tape.leaf(t.clone().with_requires_grad(track))
                .expect("finite input")
        })
        .collect();
    let out = (case.build)(&mut tape, &vars);
    let n = tape.value(out).numel();
    let shape = tape.shape(out).to_vec();
    let wv = tape
        .constant(Tensor::new(shape, loss_weights(n)).unwrap())
        .unwrap();
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    let value = tape.value(loss).data()[0];
    if !track {
        return (value, Vec::new());
    }
    tape.backward(loss).expect("backward");
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| {
            tape.grad(v)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    (value, grads)
}

/// Worst relative error between analytic and central-difference gradients
/// over all inputs of `case`.
pub fn grad_rel_err(case: &GradCase) -> f64 {
    let (_, analytic) = weighted_loss(case, &case.inputs, true);
    let mut worst = 0.0f64;
    for (k, input) in case.inputs.iter().enumerate() {
        let numeric = numeric_grad(input.data(), 1e-6, |x| {
            let mut perturbed = case.inputs.clone();
            perturbed[k] = Tensor::new(input.shape().to_vec(), x.to_vec()).unwrap();
            weighted_loss(case, &perturbed, false).0
        });
        worst = worst.max(rel_err(&analytic[k], &numeric));
    }
    worst
}

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform_vec(rng, n, 1.0)).unwrap()
}

/// Values bounded away from zero so kinks stay outside the difference stencil.
fn rand_away(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v: f64 = rng.gen_range(0.1..1.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

macro_rules! case {
    ($name:expr, [$($inp:expr),*], |$t:ident, $v:ident| $body:expr) => {
        GradCase {
            name: $name,
            inputs: vec![$($inp),*],
            build: Box::new(move |$t: &mut Tape<f64>, $v: &[Var]| $body.unwrap()),
        }
    };
}

pub fn primitive_cases() -> Vec<GradCase> {
    let mut g = rng(0x6AD);
    let noise = rand_t(&mut g, &[2, 4, 4]);
    vec![
        case!(
            "matmul",
            [rand_t(&mut g, &[3, 4]), rand_t(&mut g, &[4, 2])],
            |t, v| t.matmul(v[0], v[1])
        ),
        case!("transpose", [rand_t(&mut g, &[3, 5])], |t, v| t
            .transpose(v[0])),
        case!(
            "conv2d_k3_batched",
            [rand_t(&mut g, &[2, 3, 5, 5]), rand_t(&mut g, &[4, 3, 3, 3])],
            |t, v| t.conv2d(v[0], v[1])
        ),
        case!(
            "conv2d_k1_single",
            [rand_t(&mut g, &[3, 4, 4]), rand_t(&mut g, &[2, 3, 1, 1])],
            |t, v| t.conv2d(v[0], v[1])
        ),
        case!(
            "conv2d_k5",
            [rand_t(&mut g, &[1, 2, 6, 6]), rand_t(&mut g, &[2, 2, 5, 5])],
            |t, v| t.conv2d(v[0], v[1])
        ),
        case!(
            "add",
            [rand_t(&mut g, &[2, 3]), rand_t(&mut g, &[2, 3])],
            |t, v| t.add(v[0], v[1])
        ),
        case!(
            "sub",
            [rand_t(&mut g, &[2, 3]), rand_t(&mut g, &[2, 3])],
            |t, v| t.sub(v[0], v[1])
        ),
        case!(
            "mul",
            [rand_t(&mut g, &[2, 3]), rand_t(&mut g, &[2, 3])],
            |t, v| t.mul(v[0], v[1])
        ),
        case!("scale", [rand_t(&mut g, &[4])], |t, v| t.scale(v[0], -1.75)),
        case!("relu", [rand_away(&mut g, &[3, 4])], |t, v| t.relu(v[0])),
        case!("leaky_relu", [rand_away(&mut g, &[3, 4])], |t, v| t
            .leaky_relu(v[0], 0.2)),
        case!("tanh", [rand_t(&mut g, &[3, 4])], |t, v| t.tanh(v[0])),
        case!(
            "upsample2x_nearest",
            [rand_t(&mut g, &[2, 2, 3, 3])],
            |t, v| t.upsample2x_nearest(v[0])
        ),
        case!("avgpool2x", [rand_t(&mut g, &[2, 2, 4, 4])], |t, v| t
            .avgpool2x(v[0])),
        case!("sum", [rand_t(&mut g, &[2, 5])], |t, v| t.sum(v[0])),
        case!("mean", [rand_t(&mut g, &[2, 5])], |t, v| t.mean(v[0])),
        case!("reshape", [rand_t(&mut g, &[2, 6])], |t, v| t
            .reshape(v[0], vec![3, 4])),
        case!("permute", [rand_t(&mut g, &[2, 3, 4])], |t, v| t
            .permute(v[0], &[2, 0, 1])),
        case!(
            "add_bias",
            [rand_t(&mut g, &[2, 3, 2, 2]), rand_t(&mut g, &[3])],
            |t, v| t.add_bias(v[0], v[1])
        ),
        case!(
            "scale_channels",
            [rand_t(&mut g, &[2, 3, 2, 2]), rand_t(&mut g, &[2, 3])],
            |t, v| t.scale_channels(v[0], v[1])
        ),
        case!(
            "noise_inject",
            [rand_t(&mut g, &[2, 3, 4, 4]), rand_t(&mut g, &[1])],
            |t, v| t.noise_inject(v[0], &noise, v[1])
        ),
        case!("spatial_mean", [rand_t(&mut g, &[2, 3, 3, 3])], |t, v| t
            .spatial_mean(v[0])),
        case!("repeat_batch", [rand_t(&mut g, &[3, 2, 2])], |t, v| t
            .repeat_batch(v[0], 3)),
        case!(
            "demodulate",
            [rand_t(&mut g, &[3, 2, 3, 3]), rand_t(&mut g, &[2, 2])],
            |t, v| t.demodulate(v[0], v[1], 1e-8)
        ),
    ]
}

/// `act(act(B′M)·A)` scaled, merged into a base kernel and applied as a
/// convolution, for each activation. Factors are resampled until every
/// pre-activation sits at least `1e-3` from zero.
pub fn composite_cases() -> Vec<GradCase> {
    let mut out = Vec::new();
    for (i, act) in [Activation::Relu, Activation::LeakyRelu, Activation::None]
        .into_iter()
        .enumerate()
    {
        let (c_out, c_in, r, k) = (3, 2, 2, 3);
        let mut g = rng(0xC0 + i as u64);
        let (bp, m, a) = loop {
            let bp = rand_t(&mut g, &[c_out, r]);
            let m = rand_t(&mut g, &[r, r, k, k]);
            let a = rand_t(&mut g, &[r, c_in]);
            if preactivations_clear(&bp, &m, &a, act) {
                break (bp, m, a);
            }
        };
        let x = rand_t(&mut g, &[1, c_in, 5, 5]);
        let base = rand_t(&mut g, &[c_out, c_in, k, k]);
        let name = match act {
            Activation::Relu => "composite_relu",
            Activation::LeakyRelu => "composite_leaky_relu",
            Activation::None => "composite_none",
        };
        out.push(GradCase {
            name,
            inputs: vec![bp, m, a, x],
            build: Box::new(move |t: &mut Tape<f64>, v: &[Var]| {
                let d = conv_delta_on(t, v[0], v[1], v[2], act, 1.3, r).unwrap();
                let w0 = t.constant(base.clone()).unwrap();
                let w = t.add(w0, d).unwrap();
                t.conv2d(v[3], w).unwrap()
            }),
        });
    }
    out
}

fn preactivations_clear(
    bp: &Tensor<f64>,
    m: &Tensor<f64>,
    a: &Tensor<f64>,
    act: Activation,
) -> bool {
    if act == Activation::None {
        return true;
    }
    let (c_out, r) = (bp.shape()[0], bp.shape()[1]);
    let k = m.shape()[2];
    let c_in = a.shape()[1];
    let kk = k * k;
    let name = if act == Activation::Relu {
        "relu"
    } else {
        "leaky_relu"
    };
    let mut b = vec![0.0; c_out * r * kk];
    for o in 0..c_out {
        for s in 0..r {
            for uv in 0..kk {
                let pre: f64 = (0..r)
                    .map(|t| bp.data()[o * r + t] * m.data()[(t * r + s) * kk + uv])
                    .sum();
                if pre.abs() < 1e-3 {
                    return false;
                }
                b[(o * r + s) * kk + uv] = super::act(pre, name);
            }
        }
    }
    for o in 0..c_out {
        for i in 0..c_in {
            for uv in 0..kk {
                let pre: f64 = (0..r)
                    .map(|s| b[(o * r + s) * kk + uv] * a.data()[s * c_in + i])
                    .sum();
                if pre.abs() < 1e-3 {
                    return false;
                }
            }
        }
    }
    true
}

/// `(name, worst rel. err)` for every case.
pub fn gradient_report() -> Vec<(&'static str, f64)> {
    primitive_cases()
        .iter()
        .chain(composite_cases().iter())
        .map(|c| (c.name, grad_rel_err(c)))
        .collect()
}

pub fn gradient_integrity() -> Check {
    let report = gradient_report();
    let worst = report
        .iter()
        .cloned()
        .fold(("", 0.0f64), |w, c| if c.1 > w.1 { c } else { w });
    let msg = format!(
        "{} cases; worst rel. err {:.2e} ({})",
        report.len(),
        worst.1,
        worst.0
    );
    if report.iter().all(|(_, e)| *e < 1e-4) {
        Ok(msg)
    } else {
        let bad: Vec<String> = report
            .iter()
            .filter(|(_, e)| *e >= 1e-4)
            .map(|(n, e)| format!("{n}={e:.2e}"))
            .collect();
        Err(format!("{msg}; failing: {}", bad.join(", ")))
    }
}

fn stats(mean: Vec<f64>, cov: Vec<f64>) -> GaussStats {
    GaussStats { mean, cov, n: 100 }
}

pub fn frechet_checks(pairs: usize) -> Check {
    let mut g = rng(0xF1D);

    let c = random_spd(&mut g, 6);
    let s = stats(uniform_vec(&mut g, 6, 2.0), c);
    let self_d = frechet_distance(&s, &s).map_err(|e| e.to_string())?;
    if !(self_d.abs() < 1e-8) {
        return Err(format!("identical stats gave {self_d:e}"));
    }

    let mut worst_1d = 0.0f64;
    for _ in 0..20 {
        let (m1, m2) = (g.gen_range(-3.0..3.0), g.gen_range(-3.0..3.0));
        let (v1, v2): (f64, f64) = (g.gen_range(0.01..4.0), g.gen_range(0.01..4.0));
        let got = frechet_distance(&stats(vec![m1], vec![v1]), &stats(vec![m2], vec![v2]))
            .map_err(|e| e.to_string())?;
        let want = (m1 - m2).powi(2) + (v1.sqrt() - v2.sqrt()).powi(2);
        worst_1d = worst_1d.max((got - want).abs());
    }
    if !(worst_1d < 1e-10) {
        return Err(format!("1-D closed form off by {worst_1d:e}"));
    }

    let mut worst_rel = 0.0f64;
    for i in 0..pairs {
        let n = 2 + i % 15;
        let (mu1, mu2) = (uniform_vec(&mut g, n, 1.0), uniform_vec(&mut g, n, 1.0));
        let (c1, c2) = (random_spd(&mut g, n), random_spd(&mut g, n));
        let want = frechet_oracle(&mu1, &c1, &mu2, &c2);
        let got = frechet_distance(&stats(mu1, c1), &stats(mu2, c2)).map_err(|e| e.to_string())?;
        worst_rel = worst_rel.max((got - want).abs() / want.abs().max(1e-12));
    }
    let msg = format!(
        "self {self_d:.1e}; 1-D {worst_1d:.1e}; {pairs} SPD pairs rel. err {worst_rel:.1e}"
    );
    if worst_rel < 1e-6 {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Fills every factor of `set` with arbitrary bit patterns drawn from `g`,
/// including signed zeros and subnormals.
pub fn scramble(set: &mut AdapterSet<f32>, g: &mut ChaCha8Rng) {
    for t in set.tensors_mut() {
        for v in t.data_mut() {
            *v = match g.gen_range(0..10) {
                0 => -0.0,
                1 => f32::from_bits(g.gen_range(1..0x0080_0000)),
                _ => g.gen_range(-4.0f32..4.0),
            };
        }
    }
}

/// Random save/load cycles through real files, compared bit for bit.
pub fn checkpoint_roundtrips(arch: &ArchSpec, n: usize, dir: &Path) -> Check {
    let mut g = rng(0xC4E);
    for i in 0..n {
        let rank = g.gen_range(1..=3);
        let placement = [Placement::Both, Placement::FcOnly, Placement::ConvOnly][i % 3];
        let cfg = AdapterConfig {
            rank,
            alpha_fc: g.gen_range(0.0..8.0),
            alpha_conv: g.gen_range(0.0..8.0),
            activation: activation_of(i / 3).0,
            placement,
        };
        let mut set: AdapterSet<f32> =
            init_adapter_set(arch, cfg, i as u64).map_err(|e| e.to_string())?;
        scramble(&mut set, &mut g);
        let path = dir.join(format!("rt_{}.clrg", i % 8));
        checkpoint::save_adapters(&set, &path).map_err(|e| e.to_string())?;
        let back: AdapterSet<f32> =
            checkpoint::load_adapters(&path, arch).map_err(|e| e.to_string())?;
        let same = back.config == set.config
            && back.arch_fingerprint == set.arch_fingerprint
            && back.layers.len() == set.layers.len()
            && back
                .named_tensors()
                .iter()
                .zip(set.named_tensors().iter())
                .all(|((na, ta), (nb, tb))| na == nb && ta.shape() == tb.shape() && ta.bit_eq(tb));
        if !same {
            return Err(format!("roundtrip {i} not bit-exact"));
        }
    }
    Ok(format!("{n} roundtrips bit-exact"))
}

/// Every header byte, each replaced by three different values, must make
/// decoding fail with a checkpoint error.
pub fn header_corruption(arch: &ArchSpec) -> Check {
    let cfg = AdapterConfig::new(2, 1.25, 0.5);
    let set: AdapterSet<f32> = init_adapter_set(arch, cfg, 3).map_err(|e| e.to_string())?;
    let bytes = checkpoint::adapters_to_bytes(&set).map_err(|e| e.to_string())?;
    let path = Path::new("corrupt.clrg");
    let mut tried = 0;
    for pos in 0..HEADER_LEN {
        for mask in [0x01u8, 0x80, 0xFF] {
            let mut bad = bytes.clone();
            bad[pos] ^= mask;
            tried += 1;
            match checkpoint::adapters_from_bytes::<f32>(&bad, arch, path) {
                Err(Error::Checkpoint { .. }) => {}
                Err(other) => {
                    return Err(format!(
                        "byte {pos} ^ {mask:#04x}: wrong error kind: {other}"
                    ))
                }
                Ok(_) => return Err(format!("byte {pos} ^ {mask:#04x}: corruption not detected")),
            }
        }
    }
    Ok(format!(
        "{tried} header corruptions over {HEADER_LEN} bytes detected"
    ))
}

/// Entries of arbitrary names, ranks and extents survive the raw codec.
pub fn raw_roundtrip<S: Scalar>(entries: &[(String, Tensor<S>)], header: CheckpointHeader) -> bool {
    let refs: Vec<(String, &Tensor<S>)> = entries.iter().map(|(n, t)| (n.clone(), t)).collect();
    let bytes = checkpoint::encode(&header, &refs).expect("encodes");
    let back = checkpoint::decode::<S>(&bytes, Path::new("mem")).expect("decodes");
    back.header.fingerprint == header.fingerprint
        && back.header.rank == header.rank
        && back.header.alpha_fc.to_bits() == header.alpha_fc.to_bits()
        && back.header.alpha_conv.to_bits() == header.alpha_conv.to_bits()
        && back.entries.len() == entries.len()
        && entries.iter().all(|(n, t)| {
            back.entries
                .get(n)
                .is_some_and(|b| b.shape() == t.shape() && b.bit_eq(t))
        })
}

pub fn fingerprint_from(g: &mut ChaCha8Rng) -> Fingerprint {
    let mut b = [0u8; 32];
    g.fill(&mut b);
    Fingerprint(b)
}

pub fn fc_layer<S: Scalar>(ad: &LayerAdapter<S>) -> Option<&LoraFcAdapter<S>> {
    match ad {
        LayerAdapter::Fc(f) => Some(f),
        LayerAdapter::Conv(_) => None,
    }
}

/// Sample mean/cov against the loop oracle; returns the worst abs diff.
pub fn stats_vs_oracle(samples: &[Vec<f64>]) -> f64 {
    let s = fit_stats(samples).expect("enough samples");
    let (mu, cov) = mean_cov_oracle(samples);
    max_abs(&s.mean, &mu).max(max_abs(&s.cov, &cov))
}
