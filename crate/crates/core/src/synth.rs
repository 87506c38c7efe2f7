//! Synthetic degradation harness: the six-kernel bank, blur + subsample +
//! noise, and a procedural test scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use svsr_tensor::{Tensor, TensorError};

use crate::degradation::{degrade_with, synthesize_atom_kernel, AtomKernelParams, CoefficientMaps, KernelDictionary};
use crate::error::{CoreError, Result};
use crate::imageops::crop_at;

/// Support of synthesis kernels.
pub const SYNTH_KERNEL_SIZE: usize = 15;
/// Largest HR side kept by [`prepare_hr`].
pub const MAX_HR_SIDE: usize = 1024;

/// Two isotropic and four anisotropic Gaussians, angles in radians.
pub fn six_kernel_bank() -> Vec<AtomKernelParams> {
    use std::f64::consts::PI;
    vec![
        AtomKernelParams::isotropic(1.2),
        AtomKernelParams::isotropic(2.4),
        AtomKernelParams::new(0.0, 2.0, 0.8),
        AtomKernelParams::new(PI / 4.0, 2.0, 0.8),
        AtomKernelParams::new(PI / 2.0, 3.0, 1.0),
        AtomKernelParams::new(3.0 * PI / 4.0, 2.5, 1.5),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedKernel {
    Delta,
}

/// A bank index (1-based), explicit parameters, or `"delta"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KernelChoice {
    Bank(usize),
    Explicit(AtomKernelParams),
    Named(NamedKernel),
}

impl KernelChoice {
    /// Gaussian parameters, or `None` for the delta kernel.
    pub fn params(&self) -> Result<Option<AtomKernelParams>> {
        match *self {
            KernelChoice::Bank(id) => six_kernel_bank()
                .get(id.wrapping_sub(1))
                .copied()
                .map(Some)
                .ok_or_else(|| CoreError::config(format!("kernel id {} is not in 1..=6", id))),
            KernelChoice::Explicit(p) => {
                if p.sigma1 > 0.0 && p.sigma2 > 0.0 {
                    Ok(Some(p))
                } else {
                    Err(CoreError::config("explicit kernel sigmas must be positive"))
                }
            }
            KernelChoice::Named(NamedKernel::Delta) => Ok(None),
        }
    }

    pub fn kernel(&self) -> Result<Tensor<f64>> {
        match self.params()? {
            Some(p) => synthesize_atom_kernel(&p, SYNTH_KERNEL_SIZE),
            None => Ok(Tensor::ones([1, 1])),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSpec {
    pub kernel: KernelChoice,
    pub scale: usize,
    /// Noise standard deviation as a fraction of the `[0, 1]` range.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        SynthesisSpec {
            kernel: KernelChoice::Bank(1),
            scale: 2,
            noise_std: 0.01,
            seed: 0,
        }
    }
}

impl SynthesisSpec {
    pub fn validate(&self) -> Result<()> {
        self.kernel.params()?;
        if self.scale == 0 {
            return Err(CoreError::config("scale must be at least 1"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(CoreError::config("noise_std must be non-negative"));
        }
        Ok(())
    }
}

/// Blur (replicate borders), keep every `s`-th pixel, add seeded Gaussian
/// noise and clamp to `[0, 1]`.
pub fn degrade(hr: &Tensor<f64>, spec: &SynthesisSpec) -> Result<Tensor<f64>> {
    spec.validate()?;
    let (_, h, w) = hr.dims3()?;
    if h % spec.scale != 0 || w % spec.scale != 0 {
        return Err(TensorError::dim("degrade", format!("{}x{} not divisible by {}", h, w, spec.scale)).into());
    }
    let kernel = spec.kernel.kernel()?;
    let size = kernel.shape()[0];
    let dict = KernelDictionary {
        kernels: vec![kernel],
        size,
    };
    let mut lr = degrade_with(hr, &dict, &CoefficientMaps::uniform(1, h, w), spec.scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for v in lr.data_mut() {
        if spec.noise_std > 0.0 {
            let n: f64 = rng.sample(StandardNormal);
            *v += spec.noise_std * n;
        }
        *v = v.clamp(0.0, 1.0);
    }
    Ok(lr)
}

/// Central crop to at most [`MAX_HR_SIDE`] per side, then trimmed so both
/// sides are divisible by `scale`.
pub fn prepare_hr(hr: &Tensor<f64>, scale: usize) -> Result<Tensor<f64>> {
    let (_, h, w) = hr.dims3()?;
    let fit = |n: usize| {
        let m = n.min(MAX_HR_SIDE);
        m - m % scale
    };
    let (ht, wt) = (fit(h), fit(w));
    if ht == 0 || wt == 0 {
        return Err(TensorError::dim("prepare_hr", format!("{}x{} too small for scale {}", h, w, scale)).into());
    }
    crop_at(hr, (h - ht) / 2, (w - wt) / 2, ht, wt)
}

/// Deterministic `n×n` RGB test scene: colour ramps, discs, rectangles and a
/// striped patch, so it has both flat and textured regions.
pub fn synthetic_scene(n: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = n as f64;
    let mut img = vec![0.0; 3 * n * n];
    let idx = |c: usize, r: usize, col: usize| (c * n + r) * n + col;
    for c in 0..3 {
        let (gx, gy) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        for r in 0..n {
            for col in 0..n {
                img[idx(c, r, col)] = 0.3 + 0.3 * gx * col as f64 / nf + 0.3 * gy * r as f64 / nf;
            }
        }
    }
    let paint = |img: &mut Vec<f64>, inside: &dyn Fn(f64, f64) -> bool, colour: [f64; 3]| {
        for r in 0..n {
            for col in 0..n {
                if inside(col as f64 / nf, r as f64 / nf) {
                    for (c, v) in colour.iter().enumerate() {
                        img[idx(c, r, col)] = *v;
                    }
                }
            }
        }
    };
    for _ in 0..6 {
        let (cx, cy, rad): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen_range(0.08..0.25));
        let colour = [rng.gen(), rng.gen(), rng.gen()];
        paint(&mut img, &|x, y| (x - cx).powi(2) + (y - cy).powi(2) < rad * rad, colour);
    }
    for _ in 0..4 {
        let (x0, y0): (f64, f64) = (rng.gen_range(0.0..0.8), rng.gen_range(0.0..0.8));
        let (bw, bh): (f64, f64) = (rng.gen_range(0.1..0.3), rng.gen_range(0.1..0.3));
        let colour = [rng.gen(), rng.gen(), rng.gen()];
        paint(&mut img, &|x, y| x > x0 && x < x0 + bw && y > y0 && y < y0 + bh, colour);
    }
    for r in 0..n {
        for col in 0..n {
            let (x, y) = (col as f64 / nf, r as f64 / nf);
            if x > 0.55 && y > 0.55 {
                let stripe = 0.5 + 0.4 * (2.0 * std::f64::consts::PI * (9.0 * x + 4.0 * y)).sin();
                for c in 0..3 {
                    img[idx(c, r, col)] = stripe * (0.5 + 0.25 * c as f64);
                }
            }
        }
    }
    for v in &mut img {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::new([3, n, n], img).expect("scene shape")
}
