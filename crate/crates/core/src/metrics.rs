//! Y-channel PSNR and SSIM.

use serde::{Deserialize, Serialize};
use svsr_tensor::{Tensor, TensorError};

use crate::error::{CoreError, Result};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    /// `+inf` for identical inputs.
    pub psnr_db: f64,
    pub ssim: f64,
    pub border_crop: usize,
}

/// BT.601 studio-swing luma on `[0, 1]` RGB, rescaled to `[0, 1]`, with
/// `crop` pixels removed from each side. Returns `(plane, h, w)`.
pub fn luma_y(x: &Tensor<f64>, crop: usize) -> Result<(Vec<f64>, usize, usize)> {
    let (c, h, w) = x.dims3()?;
    if c != 3 {
        return Err(TensorError::dim("luma_y", format!("{} channels", c)).into());
    }
    if 2 * crop >= h || 2 * crop >= w {
        return Err(CoreError::Contract(format!("crop {} leaves nothing of {}x{}", crop, h, w)));
    }
    let (hc, wc) = (h - 2 * crop, w - 2 * crop);
    let (r, g, b) = (x.plane(0), x.plane(1), x.plane(2));
    let mut out = Vec::with_capacity(hc * wc);
    for row in crop..h - crop {
        for col in crop..w - crop {
            let i = row * w + col;
            out.push((16.0 + 65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i]) / 255.0);
        }
    }
    Ok((out, hc, wc))
}

fn same_shape(a: &Tensor<f64>, b: &Tensor<f64>, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())).into());
    }
    Ok(())
}

pub fn psnr_y(reference: &Tensor<f64>, test: &Tensor<f64>, crop: usize) -> Result<f64> {
    same_shape(reference, test, "psnr_y")?;
    let (a, _, _) = luma_y(reference, crop)?;
    let (b, _, _) = luma_y(test, crop)?;
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    })
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - half).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering with the normalized Gaussian window.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * wo];
    for r in 0..h {
        for c in 0..wo {
            tmp[r * wo + c] = (0..k).map(|j| g[j] * x[r * w + c + j]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for r in 0..ho {
        for c in 0..wo {
            out[r * wo + c] = (0..k).map(|i| g[i] * tmp[(r + i) * wo + c]).sum();
        }
    }
    out
}

/// Single-scale SSIM on Y (11×11 Gaussian window, σ = 1.5, dynamic range
/// 1), averaged over all valid window positions.
pub fn ssim_y(reference: &Tensor<f64>, test: &Tensor<f64>, crop: usize) -> Result<f64> {
    same_shape(reference, test, "ssim_y")?;
    let (a, h, w) = luma_y(reference, crop)?;
    let (b, _, _) = luma_y(test, crop)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(CoreError::Contract(format!(
            "ssim needs at least {0}x{0} after cropping, got {1}x{2}",
            SSIM_WINDOW, h, w
        )));
    }
    if a == b {
        return Ok(1.0);
    }
    let g = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(&a, h, w, &g);
    let mu_b = filter_valid(&b, h, w, &g);
    let saa = filter_valid(&prod(&a, &a), h, w, &g);
    let sbb = filter_valid(&prod(&b, &b), h, w, &g);
    let sab = filter_valid(&prod(&a, &b), h, w, &g);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_a.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = saa[i] - ma * ma;
            let vb = sbb[i] - mb * mb;
            let cov = sab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / n as f64)
}

pub fn evaluate(reference: &Tensor<f64>, test: &Tensor<f64>, crop: usize) -> Result<MetricResult> {
    Ok(MetricResult {
        psnr_db: psnr_y(reference, test, crop)?,
        ssim: ssim_y(reference, test, crop)?,
        border_crop: crop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images() {
        let x = Tensor::from_fn([3, 16, 16], |i| (i % 7) as f64 / 7.0);
        assert_eq!(psnr_y(&x, &x, 2).unwrap(), f64::INFINITY);
        assert_eq!(ssim_y(&x, &x, 2).unwrap(), 1.0);
    }

    #[test]
    fn small_images_rejected() {
        let x = Tensor::zeros([3, 14, 14]);
        assert!(ssim_y(&x, &x, 2).is_err());
        assert!(psnr_y(&x, &Tensor::zeros([3, 14, 13]), 0).is_err());
    }

    #[test]
    fn inverted_binary_image_has_negative_ssim() {
        let x = Tensor::from_fn([3, 16, 16], |i| ((i / 16 + i % 16) % 2) as f64);
        let y = x.map(|v| 1.0 - v);
        assert!(ssim_y(&x, &y, 0).unwrap() < 0.0);
    }
}
