//! Bilinear resampling shared by image loading, crop-and-resize and the
//! differentiable resize used inside the losses.
//!
//! Sample centers follow the half-pixel convention: output sample `d` of an
//! axis resized from `n_in` to `n_out` reads source coordinate
//! `(d + 0.5) * n_in / n_out - 0.5`, clamped to `[0, n_in - 1]`.

use candle_core::{DType, Device, Tensor};

/// One output sample: the two source indices and the weight of the second.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

pub fn taps(n_in: usize, n_out: usize) -> Vec<Tap> {
    assert!(n_in > 0 && n_out > 0, "resample axes must be non-empty");
    let scale = n_in as f64 / n_out as f64;
    let last = (n_in - 1) as f64;
    (0..n_out)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(n_in - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

/// Dense row-major `n_out x n_in` interpolation matrix.
pub fn matrix(n_in: usize, n_out: usize) -> Vec<f64> {
    let mut m = vec![0.0; n_in * n_out];
    for (d, t) in taps(n_in, n_out).into_iter().enumerate() {
        m[d * n_in + t.lo] += 1.0 - t.frac;
        m[d * n_in + t.hi] += t.frac;
    }
    m
}

/// Resize one planar channel.
pub fn resize_plane(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    debug_assert_eq!(src.len(), h * w);
    if h == out_h && w == out_w {
        return src.to_vec();
    }
    let tx = taps(w, out_w);
    let ty = taps(h, out_h);
    // Horizontal pass into an h x out_w buffer, then vertical.
    let mut tmp = vec![0f64; h * out_w];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for (x, t) in tx.iter().enumerate() {
            tmp[y * out_w + x] = row[t.lo] as f64 * (1.0 - t.frac) + row[t.hi] as f64 * t.frac;
        }
    }
    let mut out = vec![0f32; out_h * out_w];
    for (y, t) in ty.iter().enumerate() {
        for x in 0..out_w {
            let v = tmp[t.lo * out_w + x] * (1.0 - t.frac) + tmp[t.hi * out_w + x] * t.frac;
            out[y * out_w + x] = v as f32;
        }
    }
    out
}

/// Differentiable bilinear resize of an `(N, C, H, W)` tensor to `(N, C, out_h, out_w)`,
/// written as `Ry · X · Rxᵀ` so gradients come from matmul.
pub fn resize_tensor(x: &Tensor, out_h: usize, out_w: usize) -> candle_core::Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if h == out_h && w == out_w {
        return Ok(x.clone());
    }
    let ry = matrix_tensor(h, out_h, x.dtype(), x.device())?;
    let rxt = matrix_tensor(w, out_w, x.dtype(), x.device())?.t()?;
    let rows = ry.broadcast_matmul(x)?;
    rows.broadcast_matmul(&rxt)
}

pub fn matrix_tensor(
    n_in: usize,
    n_out: usize,
    dtype: DType,
    device: &Device,
) -> candle_core::Result<Tensor> {
    Tensor::from_vec(matrix(n_in, n_out), (n_out, n_in), device)?.to_dtype(dtype)
}
