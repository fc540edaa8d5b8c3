//! Procedural image datasets and binary PPM/PGM interchange.
//!
//! The source distribution draws one to three solid shapes (circles and
//! squares) with warm-to-green hues on a dim background. Each target kind
//! shifts exactly one factor of that distribution.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const SOURCE_HUE_SPAN: f64 = 120.0;

/// Which distribution a dataset is drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetKind {
    Source,
    /// Source shapes with every hue rotated by `rotation` degrees.
    Palette {
        rotation: f64,
    },
    /// Triangles and rings instead of circles and squares.
    Shape,
    /// Source shapes filled with stripes of `frequency` cycles per image.
    Texture {
        frequency: f64,
    },
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Source => "source",
            DatasetKind::Palette { .. } => "palette",
            DatasetKind::Shape => "shape",
            DatasetKind::Texture { .. } => "texture",
        }
    }

    fn style(&self) -> Style {
        let mut s = Style {
            hue_offset: 0.0,
            shapes: [ShapeClass::Circle, ShapeClass::Square],
            stripes: 0.0,
        };
        match *self {
            DatasetKind::Source => {}
            DatasetKind::Palette { rotation } => s.hue_offset = rotation,
            DatasetKind::Shape => s.shapes = [ShapeClass::Triangle, ShapeClass::Ring],
            DatasetKind::Texture { frequency } => s.stripes = frequency,
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    #[serde(flatten)]
    pub kind: DatasetKind,
    pub count: usize,
    pub seed: u64,
    pub resolution: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum ShapeClass {
    Circle,
    Square,
    Triangle,
    Ring,
}

impl ShapeClass {
    fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        match self {
            ShapeClass::Circle => dx * dx + dy * dy < r * r,
            ShapeClass::Square => dx.abs() < r && dy.abs() < r,
            ShapeClass::Triangle => dy.abs() < r && dx.abs() < (dy + r) * 0.5,
            ShapeClass::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 < r * r && d2 > 0.3 * r * r
            }
        }
    }
}

struct Style {
    hue_offset: f64,
    shapes: [ShapeClass; 2],
    stripes: f64,
}

/// An 8-bit image stored row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn render(style: &Style, res: usize, rng: &mut ChaCha8Rng) -> Image {
    let bg_hue = style.hue_offset + rng.gen_range(0.0..SOURCE_HUE_SPAN);
    let bg_top = hsv(bg_hue, 0.3, rng.gen_range(0.15..0.3));
    let bg_bottom = hsv(bg_hue, 0.3, rng.gen_range(0.05..0.15));
    let mut px = vec![[0.0f64; 3]; res * res];
    for y in 0..res {
        let t = (y as f64 + 0.5) / res as f64;
        for x in 0..res {
            for c in 0..3 {
                px[y * res + x][c] = bg_top[c] * (1.0 - t) + bg_bottom[c] * t;
            }
        }
    }
    let shapes = rng.gen_range(1..=3);
    for _ in 0..shapes {
        let class = style.shapes[rng.gen_range(0..2)];
        let hue = style.hue_offset + rng.gen_range(0.0..SOURCE_HUE_SPAN);
        let color = hsv(hue, rng.gen_range(0.6..0.9), rng.gen_range(0.7..1.0));
        let (cx, cy) = (rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8));
        let r = rng.gen_range(0.12..0.3);
        let theta = rng.gen_range(0.0..PI);
        for y in 0..res {
            let fy = (y as f64 + 0.5) / res as f64;
            for x in 0..res {
                let fx = (x as f64 + 0.5) / res as f64;
                if !class.contains(fx - cx, fy - cy, r) {
                    continue;
                }
                let shade = if style.stripes > 0.0 {
                    let phase = 2.0 * PI * style.stripes * (fx * theta.cos() + fy * theta.sin());
                    0.55 + 0.45 * phase.sin()
                } else {
                    1.0
                };
                px[y * res + x] = color.map(|c| c * shade);
            }
        }
    }
    Image {
        width: res,
        height: res,
        channels: 3,
        data: px.iter().flat_map(|p| p.map(to_u8)).collect(),
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("dataset count must be at least 1".into()));
        }
        if self.resolution < 4 {
            return Err(Error::Config(format!(
                "dataset resolution {} is below 4",
                self.resolution
            )));
        }
        match self.kind {
            DatasetKind::Palette { rotation } if !rotation.is_finite() => {
                Err(Error::Config("palette rotation must be finite".into()))
            }
            DatasetKind::Texture { frequency } if !(frequency > 0.0 && frequency.is_finite()) => {
                Err(Error::Config("texture frequency must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    /// Image `index` of this dataset; independent of `count`.
    pub fn image(&self, index: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        render(&self.kind.style(), self.resolution, &mut rng)
    }

    pub fn images(&self) -> Result<Vec<Image>> {
        self.validate()?;
        Ok((0..self.count).map(|i| self.image(i)).collect())
    }

    /// Images `start..start + n` as `[3×R×R]` tensors in `[-1, 1]`.
    pub fn tensors<S: Scalar>(&self, start: usize, n: usize) -> Result<Vec<Tensor<S>>> {
        self.validate()?;
        Ok((start..start + n)
            .map(|i| self.image(i).to_tensor())
            .collect())
    }
}

impl Image {
    /// `[c×h×w]` with `v / 127.5 − 1`.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let (c, h, w) = (self.channels, self.height, self.width);
        Tensor::from_fn(vec![c, h, w], |i| {
            let (ch, p) = (i / (h * w), i % (h * w));
            S::from_f64_lossy(self.data[p * c + ch] as f64 / 127.5 - 1.0)
        })
    }

    /// Inverse of [`Image::to_tensor`], clamping to `[-1, 1]`.
    pub fn from_tensor<S: Scalar>(t: &Tensor<S>) -> Result<Self> {
        let s = t.shape();
        if s.len() != 3 || !(s[0] == 1 || s[0] == 3) {
            return Err(Error::InvalidArgument(format!(
                "image tensor must be [1|3, h, w], got {s:?}"
            )));
        }
        let (c, h, w) = (s[0], s[1], s[2]);
        let d = t.data();
        let mut data = vec![0u8; c * h * w];
        for ch in 0..c {
            for p in 0..h * w {
                data[p * c + ch] = to_u8((d[ch * h * w + p].as_f64() + 1.0) / 2.0);
            }
        }
        Ok(Self {
            width: w,
            height: h,
            channels: c,
            data,
        })
    }

    /// Binary PPM (`P6`, RGB) or PGM (`P5`, grey), maxval 255.
    pub fn to_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 3 { "P6" } else { "P5" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_pnm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArgument(format!("pnm: {m}"));
        let mut reader = BufReader::new(bytes);
        let mut tokens = Vec::new();
        let mut line = String::new();
        while tokens.len() < 4 {
            line.clear();
            if reader
                .read_line(&mut line)
                .map_err(|e| bad(&e.to_string()))?
                == 0
            {
                return Err(bad("truncated header"));
            }
            let content = line.split('#').next().unwrap_or("");
            tokens.extend(content.split_whitespace().map(str::to_string));
        }
        if tokens.len() != 4 {
            return Err(bad("header must end on its own line"));
        }
        let channels = match tokens[0].as_str() {
            "P6" => 3,
            "P5" => 1,
            other => return Err(bad(&format!("unsupported magic {other:?}"))),
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| bad(&format!("bad number {s:?}")))
        };
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval != 255 {
            return Err(bad("only maxval 255 is supported"));
        }
        let mut data = Vec::new();
        reader
            .read_to_end(&mut data)
            .map_err(|e| bad(&e.to_string()))?;
        if data.len() != width * height * channels {
            return Err(bad(&format!(
                "expected {} data bytes, found {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_pnm()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_pnm(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Writes `spec.count` images as `img_0000.ppm`, … into `dir`.
pub fn write_dataset(spec: &DatasetSpec, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    let imgs = spec.images()?;
    let mut paths = Vec::with_capacity(imgs.len());
    for (i, img) in imgs.iter().enumerate() {
        let p = dir.join(format!("img_{i:04}.ppm"));
        img.write(&p)?;
        paths.push(p);
    }
    Ok(paths)
}
