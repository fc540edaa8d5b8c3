//! Raw slice kernels shared by the tape and by tape-free evaluation code.
//!
//! All reductions run in a fixed order, so results are bit-reproducible.

use super::Scalar;

/// `a[m×n] · b[n×p]`.
pub fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, n: usize, p: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * p];
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == S::zero() {
                continue;
            }
            let brow = &b[k * p..(k + 1) * p];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// `a[m×p] · b[n×p]ᵀ`.
pub fn matmul_nt<S: Scalar>(a: &[S], b: &[S], m: usize, n: usize, p: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * p..(i + 1) * p];
        for j in 0..n {
            let brow = &b[j * p..(j + 1) * p];
            let mut acc = S::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// `a[m×n]ᵀ · b[m×p]`.
pub fn matmul_tn<S: Scalar>(a: &[S], b: &[S], m: usize, n: usize, p: usize) -> Vec<S> {
    let mut out = vec![S::zero(); n * p];
    for i in 0..m {
        let brow = &b[i * p..(i + 1) * p];
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == S::zero() {
                continue;
            }
            let orow = &mut out[k * p..(k + 1) * p];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// Unfolds one `[c×h×w]` image into `[(c·k·k)×(h·w)]` patch columns with
/// zero padding `(k-1)/2`.
pub fn im2col<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, k: usize) -> Vec<S> {
    let pad = (k / 2) as isize;
    let hw = h * w;
    let mut cols = vec![S::zero(); c * k * k * hw];
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for u in 0..k {
            for v in 0..k {
                let row = (ch * k + u) * k + v;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + u as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for xx in 0..w {
                        let sx = xx as isize + v as isize - pad;
                        if sx >= 0 && sx < w as isize {
                            dst[y * w + xx] = src_row[sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates patch columns back into an image.
pub fn col2im<S: Scalar>(cols: &[S], c: usize, h: usize, w: usize, k: usize, out: &mut [S]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        for u in 0..k {
            for v in 0..k {
                let row = (ch * k + u) * k + v;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + u as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for xx in 0..w {
                        let sx = xx as isize + v as isize - pad;
                        if sx >= 0 && sx < w as isize {
                            out[ch * hw + sy as usize * w + sx as usize] += src[y * w + xx];
                        }
                    }
                }
            }
        }
    }
}

/// Geometry of a batched same-padded convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvDims {
    pub batch: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }
}

/// Cross-correlation of `x[batch×c_in×h×w]` with `weight[c_out×c_in×k×k]`.
pub fn conv2d_forward<S: Scalar>(x: &[S], weight: &[S], d: ConvDims) -> Vec<S> {
    let hw = d.h * d.w;
    let mut out = Vec::with_capacity(d.batch * d.c_out * hw);
    for n in 0..d.batch {
        let img = &x[n * d.c_in * hw..(n + 1) * d.c_in * hw];
        if d.k == 1 {
            out.extend(matmul(weight, img, d.c_out, d.c_in, hw));
        } else {
            let cols = im2col(img, d.c_in, d.h, d.w, d.k);
            out.extend(matmul(weight, &cols, d.c_out, d.patch(), hw));
        }
    }
    out
}

/// Returns `(grad_x, grad_weight)`; either is skipped when not requested.
pub fn conv2d_backward<S: Scalar>(
    x: &[S],
    weight: &[S],
    grad_out: &[S],
    d: ConvDims,
    want_x: bool,
    want_w: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>) {
    let hw = d.h * d.w;
    let patch = d.patch();
    let mut gx = want_x.then(|| vec![S::zero(); d.batch * d.c_in * hw]);
    let mut gw = want_w.then(|| vec![S::zero(); d.c_out * patch]);
    for n in 0..d.batch {
        let img = &x[n * d.c_in * hw..(n + 1) * d.c_in * hw];
        let go = &grad_out[n * d.c_out * hw..(n + 1) * d.c_out * hw];
        if let Some(gw) = gw.as_mut() {
            let part = if d.k == 1 {
                matmul_nt(go, img, d.c_out, patch, hw)
            } else {
                let cols = im2col(img, d.c_in, d.h, d.w, d.k);
                matmul_nt(go, &cols, d.c_out, patch, hw)
            };
            for (g, p) in gw.iter_mut().zip(part) {
                *g += p;
            }
        }
        if let Some(gx) = gx.as_mut() {
            let dcols = matmul_tn(weight, go, d.c_out, patch, hw);
            let dst = &mut gx[n * d.c_in * hw..(n + 1) * d.c_in * hw];
            if d.k == 1 {
                for (g, p) in dst.iter_mut().zip(dcols) {
                    *g += p;
                }
            } else {
                col2im(&dcols, d.c_in, d.h, d.w, d.k, dst);
            }
        }
    }
    (gx, gw)
}

/// Nearest-neighbour 2× upsampling over the trailing two axes.
pub fn upsample2x<S: Scalar>(x: &[S], planes: usize, h: usize, w: usize) -> Vec<S> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![S::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
            }
        }
    }
    out
}

pub fn upsample2x_backward<S: Scalar>(g: &[S], planes: usize, h: usize, w: usize) -> Vec<S> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![S::zero(); planes * h * w];
    for p in 0..planes {
        let src = &g[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                dst[(y / 2) * w + xx / 2] += src[y * ow + xx];
            }
        }
    }
    out
}

/// 2×2 average pooling over the trailing two axes (even extents).
pub fn avgpool2x<S: Scalar>(x: &[S], planes: usize, h: usize, w: usize) -> Vec<S> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::from_f64_lossy(0.25);
    let mut out = vec![S::zero(); planes * oh * ow];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
        for y in 0..oh {
            for xx in 0..ow {
                let s = src[2 * y * w + 2 * xx]
                    + src[2 * y * w + 2 * xx + 1]
                    + src[(2 * y + 1) * w + 2 * xx]
                    + src[(2 * y + 1) * w + 2 * xx + 1];
                dst[y * ow + xx] = s * quarter;
            }
        }
    }
    out
}

pub fn avgpool2x_backward<S: Scalar>(g: &[S], planes: usize, h: usize, w: usize) -> Vec<S> {
    let (oh, ow) = (h / 2, w / 2);
    let quarter = S::from_f64_lossy(0.25);
    let mut out = vec![S::zero(); planes * h * w];
    for p in 0..planes {
        let src = &g[p * oh * ow..(p + 1) * oh * ow];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..oh {
            for xx in 0..ow {
                let v = src[y * ow + xx] * quarter;
                dst[2 * y * w + 2 * xx] += v;
                dst[2 * y * w + 2 * xx + 1] += v;
                dst[(2 * y + 1) * w + 2 * xx] += v;
                dst[(2 * y + 1) * w + 2 * xx + 1] += v;
            }
        }
    }
    out
}

pub fn leaky_relu<S: Scalar>(v: S, slope: S) -> S {
    if v >= S::zero() {
        v
    } else {
        v * slope
    }
}
