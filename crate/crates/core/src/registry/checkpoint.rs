//! Binary container shared by adapter and base-weight checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! 0   "CLRG"
//! 4   u16  format version (1)
//! 6   [u8; 32] architecture fingerprint
//! 38  u16  rank
//! 40  f64  alpha_fc
//! 48  f64  alpha_conv
//! 56  u32  entry count
//! 60  entries: u16 name length, UTF-8 name, u8 dtype (0 = f32, 1 = f64),
//!     u8 ndim, ndim × u32 extents, raw data
//! end [u8; 32] SHA-256 of every preceding byte
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use sha2::{Digest, Sha256};

use crate::adapter::{
    Activation, AdapterConfig, AdapterSet, LLoraConvAdapter, LayerAdapter, LoraFcAdapter, Placement,
};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::networks::{ArchSpec, GeneratorWeights, LayerKind};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"CLRG";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 60;
pub const DIGEST_LEN: usize = 32;
const ACTIVATION_ENTRY: &str = "meta/activation";
const BASE_PREFIX: &str = "base/";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckpointHeader {
    pub fingerprint: Fingerprint,
    pub rank: u16,
    pub alpha_fc: f64,
    pub alpha_conv: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S: Scalar = f32> {
    pub header: CheckpointHeader,
    pub entries: IndexMap<String, Tensor<S>>,
}

fn too_big(what: &str) -> Error {
    Error::InvalidArgument(format!("checkpoint: {what} does not fit the format"))
}

pub fn encode<S: Scalar>(
    header: &CheckpointHeader,
    entries: &[(String, &Tensor<S>)],
) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(HEADER_LEN + DIGEST_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&header.fingerprint.0);
    out.extend_from_slice(&header.rank.to_le_bytes());
    out.extend_from_slice(&header.alpha_fc.to_le_bytes());
    out.extend_from_slice(&header.alpha_conv.to_le_bytes());
    let count = u32::try_from(entries.len()).map_err(|_| too_big("entry count"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len()).map_err(|_| too_big("entry name"))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(S::DTYPE_TAG);
        out.push(u8::try_from(t.shape().len()).map_err(|_| too_big("tensor rank"))?);
        for &d in t.shape() {
            out.extend_from_slice(
                &u32::try_from(d)
                    .map_err(|_| too_big("tensor extent"))?
                    .to_le_bytes(),
            );
        }
        out.extend_from_slice(&t.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, offset: usize, reason: impl Into<String>) -> Error {
        Error::Checkpoint {
            path: self.path.to_path_buf(),
            offset,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(self.pos, format!("truncated while reading {what}"))),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }
}

/// Parses and verifies a checkpoint. `path` only labels error messages.
pub fn decode<S: Scalar>(bytes: &[u8], path: &Path) -> Result<Checkpoint<S>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        path,
    };
    if r.take(4, "magic")? != MAGIC {
        return Err(r.fail(0, "bad magic bytes"));
    }
    let version = r.u16("format version")?;
    if version != FORMAT_VERSION {
        return Err(r.fail(4, format!("unsupported format version {version}")));
    }
    let fingerprint = Fingerprint(r.take(32, "fingerprint")?.try_into().expect("32 bytes"));
    let rank = r.u16("rank")?;
    let mut alphas = [0.0; 2];
    for a in alphas.iter_mut() {
        let at = r.pos;
        *a = r.f64("alpha")?;
        if !a.is_finite() || *a < 0.0 {
            return Err(r.fail(at, format!("invalid alpha {a}")));
        }
    }
    let count = r.u32("entry count")?;
    let body_end = bytes
        .len()
        .checked_sub(DIGEST_LEN)
        .filter(|&e| e >= HEADER_LEN)
        .ok_or_else(|| r.fail(bytes.len(), "truncated: missing digest"))?;
    let mut entries = IndexMap::new();
    for _ in 0..count {
        let start = r.pos;
        if start >= body_end {
            return Err(r.fail(start, "truncated: fewer entries than declared"));
        }
        let len = r.u16("entry name length")? as usize;
        let name_at = r.pos;
        let name = std::str::from_utf8(r.take(len, "entry name")?)
            .map_err(|_| r.fail(name_at, "entry name is not UTF-8"))?
            .to_string();
        let tag_at = r.pos;
        let tag = r.u8("dtype")?;
        if tag != S::DTYPE_TAG {
            return Err(r.fail(
                tag_at,
                format!("dtype tag {tag}, expected {}", S::DTYPE_TAG),
            ));
        }
        let ndim = r.u8("ndim")? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32("extent")? as usize);
        }
        let data_at = r.pos;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.fail(data_at, "tensor size overflows"))?;
        let nbytes = numel
            .checked_mul(S::BYTES)
            .filter(|&n| data_at + n <= body_end)
            .ok_or_else(|| r.fail(data_at, format!("truncated tensor data for {name:?}")))?;
        let raw = r.take(nbytes, "tensor data")?;
        let data = raw.chunks_exact(S::BYTES).map(S::read_le).collect();
        let t = Tensor::new(shape, data).map_err(|e| r.fail(data_at, e.to_string()))?;
        if entries.insert(name.clone(), t).is_some() {
            return Err(r.fail(start, format!("duplicate entry {name:?}")));
        }
    }
    if r.pos != body_end {
        return Err(r.fail(r.pos, "unexpected bytes after last entry"));
    }
    let digest = Sha256::digest(&bytes[..body_end]);
    if digest.as_slice() != &bytes[body_end..] {
        return Err(r.fail(body_end, "checksum mismatch"));
    }
    Ok(Checkpoint {
        header: CheckpointHeader {
            fingerprint,
            rank,
            alpha_fc: alphas[0],
            alpha_conv: alphas[1],
        },
        entries,
    })
}

/// Writes `bytes` to a sibling temp file, syncs it, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_path(path);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn temp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Serializes an adapter set: factors plus the activation code.
pub fn adapters_to_bytes<S: Scalar>(set: &AdapterSet<S>) -> Result<Vec<u8>> {
    let rank = u16::try_from(set.config.rank).map_err(|_| too_big("rank"))?;
    let header = CheckpointHeader {
        fingerprint: set.arch_fingerprint,
        rank,
        alpha_fc: set.config.alpha_fc,
        alpha_conv: set.config.alpha_conv,
    };
    let act = Tensor::<S>::full(
        vec![1],
        S::from_f64_lossy(set.config.activation.code() as f64),
    );
    let mut entries: Vec<(String, &Tensor<S>)> = set.named_tensors();
    entries.push((ACTIVATION_ENTRY.to_string(), &act));
    encode(&header, &entries)
}

fn take_entry<S: Scalar>(
    entries: &mut IndexMap<String, Tensor<S>>,
    name: String,
    shape: Vec<usize>,
    path: &Path,
) -> Result<Tensor<S>> {
    let t = entries
        .shift_remove(&name)
        .ok_or_else(|| Error::Checkpoint {
            path: path.to_path_buf(),
            offset: HEADER_LEN,
            reason: format!("missing entry {name:?}"),
        })?;
    if t.shape() != shape {
        return Err(Error::AdapterShape {
            layer: name,
            reason: format!("shape {:?}, expected {shape:?}", t.shape()),
        });
    }
    Ok(t)
}

/// Rebuilds an adapter set and checks it against `arch`.
pub fn adapters_from_bytes<S: Scalar>(
    bytes: &[u8],
    arch: &ArchSpec,
    path: &Path,
) -> Result<AdapterSet<S>> {
    let Checkpoint {
        header,
        mut entries,
    } = decode::<S>(bytes, path)?;
    let expected = arch.fingerprint();
    if header.fingerprint != expected {
        return Err(Error::FingerprintMismatch {
            expected: expected.to_hex(),
            found: header.fingerprint.to_hex(),
        });
    }
    let entry_err = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        offset: HEADER_LEN,
        reason,
    };
    let act = entries
        .shift_remove(ACTIVATION_ENTRY)
        .ok_or_else(|| entry_err(format!("missing entry {ACTIVATION_ENTRY:?}")))?;
    let code = act.data().first().map(|v| v.as_f64()).unwrap_or(-1.0);
    let activation = Activation::from_code(code as u8)
        .filter(|_| act.numel() == 1 && code.fract() == 0.0 && code >= 0.0)
        .ok_or_else(|| entry_err(format!("invalid activation code {code}")))?;
    let layers = arch.adaptable_layers();
    let present = |kind_fc: bool| {
        layers.iter().any(|l| {
            l.kind.is_fc() == kind_fc
                && entries.contains_key(&format!(
                    "{}/{}",
                    l.name,
                    if kind_fc { "B" } else { "B_prime" }
                ))
        })
    };
    let placement = match (present(true), present(false)) {
        (true, true) => Placement::Both,
        (true, false) => Placement::FcOnly,
        (false, true) => Placement::ConvOnly,
        (false, false) => return Err(entry_err("no adapter entries".into())),
    };
    let config = AdapterConfig {
        rank: header.rank as usize,
        alpha_fc: header.alpha_fc,
        alpha_conv: header.alpha_conv,
        activation,
        placement,
    };
    config.validate()?;
    let mut out = IndexMap::new();
    for l in layers.iter().filter(|l| placement.includes(&l.kind)) {
        let n = &l.name;
        let r = l.kind.capped_rank(config.rank);
        let adapter = match l.kind {
            LayerKind::Fc { d_in, d_out } => LayerAdapter::Fc(LoraFcAdapter {
                b: take_entry(&mut entries, format!("{n}/B"), vec![d_out, r], path)?,
                a: take_entry(&mut entries, format!("{n}/A"), vec![r, d_in], path)?,
                alpha: config.alpha_fc,
                rank: r,
            }),
            LayerKind::Conv { c_in, c_out, k } => LayerAdapter::Conv(LLoraConvAdapter {
                b_prime: take_entry(&mut entries, format!("{n}/B_prime"), vec![c_out, r], path)?,
                m_inst: take_entry(&mut entries, format!("{n}/M_inst"), vec![r, r, k, k], path)?,
                a: take_entry(&mut entries, format!("{n}/A"), vec![r, c_in], path)?,
                alpha: config.alpha_conv,
                rank: r,
                activation,
            }),
        };
        out.insert(n.clone(), adapter);
    }
    if let Some(extra) = entries.keys().next() {
        return Err(entry_err(format!("unexpected entry {extra:?}")));
    }
    let set = AdapterSet {
        arch_fingerprint: header.fingerprint,
        config,
        layers: out,
    };
    set.verify_against(arch)?;
    Ok(set)
}

/// Writes an adapter-only checkpoint atomically.
pub fn save_adapters<S: Scalar>(set: &AdapterSet<S>, path: &Path) -> Result<()> {
    write_atomic(path, &adapters_to_bytes(set)?)
}

pub fn load_adapters<S: Scalar>(path: &Path, arch: &ArchSpec) -> Result<AdapterSet<S>> {
    adapters_from_bytes(&read_file(path)?, arch, path)
}

/// Base weights in the same container, entry names prefixed `base/`,
/// rank and alphas zero.
pub fn base_to_bytes<S: Scalar>(weights: &GeneratorWeights<S>) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        fingerprint: weights.arch.fingerprint(),
        rank: 0,
        alpha_fc: 0.0,
        alpha_conv: 0.0,
    };
    let entries: Vec<(String, &Tensor<S>)> = weights
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (format!("{BASE_PREFIX}{n}"), t))
        .collect();
    encode(&header, &entries)
}

pub fn base_from_bytes<S: Scalar>(
    bytes: &[u8],
    arch: &ArchSpec,
    path: &Path,
) -> Result<GeneratorWeights<S>> {
    let ckpt = decode::<S>(bytes, path)?;
    let expected = arch.fingerprint();
    if ckpt.header.fingerprint != expected {
        return Err(Error::FingerprintMismatch {
            expected: expected.to_hex(),
            found: ckpt.header.fingerprint.to_hex(),
        });
    }
    let mut named = IndexMap::new();
    for (name, t) in ckpt.entries {
        let stripped = name
            .strip_prefix(BASE_PREFIX)
            .ok_or_else(|| Error::Checkpoint {
                path: path.to_path_buf(),
                offset: HEADER_LEN,
                reason: format!("entry {name:?} lacks the {BASE_PREFIX:?} prefix"),
            })?;
        named.insert(stripped.to_string(), t);
    }
    GeneratorWeights::from_named(arch, named)
}

pub fn save_base<S: Scalar>(weights: &GeneratorWeights<S>, path: &Path) -> Result<()> {
    write_atomic(path, &base_to_bytes(weights)?)
}

pub fn load_base<S: Scalar>(path: &Path, arch: &ArchSpec) -> Result<GeneratorWeights<S>> {
    base_from_bytes(&read_file(path)?, arch, path)
}
