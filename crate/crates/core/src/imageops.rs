//! Plain (non-differentiable) image utilities on `[C, H, W]` tensors.

use svsr_tensor::{Tensor, TensorError};

use crate::error::Result;

/// Keys cubic convolution weight with `a = -0.5`.
fn cubic(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

/// Taps and weights for resampling a length-`n` axis to `n * s` with
/// half-pixel alignment and clamped borders.
fn taps(n: usize, s: usize) -> Vec<([usize; 4], [f64; 4])> {
    (0..n * s)
        .map(|o| {
            let src = (o as f64 + 0.5) / s as f64 - 0.5;
            let base = src.floor();
            let frac = src - base;
            let mut idx = [0; 4];
            let mut w = [0.0; 4];
            for k in 0..4 {
                let i = base as isize + k as isize - 1;
                idx[k] = i.clamp(0, n as isize - 1) as usize;
                w[k] = cubic(frac - (k as f64 - 1.0));
            }
            (idx, w)
        })
        .collect()
}

/// Separable bicubic upsampling by an integer factor, clamped to `[0, 1]`.
pub fn bicubic_upsample(x: &Tensor<f64>, s: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = x.dims3()?;
    if s == 0 {
        return Err(TensorError::contract("bicubic_upsample", "scale must be positive").into());
    }
    let (ho, wo) = (h * s, w * s);
    let tx = taps(w, s);
    let ty = taps(h, s);
    let mut out = vec![0.0; c * ho * wo];
    let mut tmp = vec![0.0; h * wo];
    for ch in 0..c {
        let p = x.plane(ch);
        for r in 0..h {
            for (o, (idx, wt)) in tx.iter().enumerate() {
                tmp[r * wo + o] = (0..4).map(|k| wt[k] * p[r * w + idx[k]]).sum();
            }
        }
        let dst = &mut out[ch * ho * wo..(ch + 1) * ho * wo];
        for (o, (idx, wt)) in ty.iter().enumerate() {
            for col in 0..wo {
                let v: f64 = (0..4).map(|k| wt[k] * tmp[idx[k] * wo + col]).sum();
                dst[o * wo + col] = v.clamp(0.0, 1.0);
            }
        }
    }
    Ok(Tensor::new([c, ho, wo], out)?)
}

/// Extends `[C, H, W]` to `[C, ht, wt]` by replicating the last row and
/// column.
pub fn pad_replicate(x: &Tensor<f64>, ht: usize, wt: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = x.dims3()?;
    if ht < h || wt < w {
        return Err(TensorError::dim("pad_replicate", format!("{}x{} into {}x{}", h, w, ht, wt)).into());
    }
    let mut out = Vec::with_capacity(c * ht * wt);
    for ch in 0..c {
        let p = x.plane(ch);
        for r in 0..ht {
            let rr = r.min(h - 1);
            out.extend((0..wt).map(|col| p[rr * w + col.min(w - 1)]));
        }
    }
    Ok(Tensor::new([c, ht, wt], out)?)
}

/// Top-left `[C, ht, wt]` window.
pub fn crop(x: &Tensor<f64>, ht: usize, wt: usize) -> Result<Tensor<f64>> {
    crop_at(x, 0, 0, ht, wt)
}

pub fn crop_at(x: &Tensor<f64>, top: usize, left: usize, ht: usize, wt: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = x.dims3()?;
    if top + ht > h || left + wt > w {
        return Err(TensorError::dim("crop", format!("{}x{}+{}+{} from {}x{}", ht, wt, top, left, h, w)).into());
    }
    let mut out = Vec::with_capacity(c * ht * wt);
    for ch in 0..c {
        let p = x.plane(ch);
        for r in top..top + ht {
            out.extend_from_slice(&p[r * w + left..r * w + left + wt]);
        }
    }
    Ok(Tensor::new([c, ht, wt], out)?)
}

/// Smallest multiple of `m` not below `n`.
pub fn round_up(n: usize, m: usize) -> usize {
    n.div_ceil(m) * m
}
