//! Spatially-variant degradation: a small dictionary of anisotropic
//! Gaussian atoms, mixed per pixel by texture-driven coefficient maps,
//! followed by subsampling.
//!
//! `(D x)[h, w] = Σ_i W_i[h, w] · (g_i ⋆ x)[h, w]`, then keep every
//! `s`-th pixel. Every `g_i` is non-negative with unit sum and the maps
//! form a per-pixel partition of unity, so each effective per-pixel kernel
//! is itself a valid blur kernel.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use svsr_tensor::{softplus, softplus_inv, Padding, Real, Tape, Tensor, TensorError, Var};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationConfig {
    pub n_atoms: usize,
    pub kernel_size: usize,
    pub sigma_g: f64,
    pub median_window: usize,
    pub scale: usize,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        DegradationConfig {
            n_atoms: 5,
            kernel_size: 15,
            sigma_g: 0.5,
            median_window: 15,
            scale: 2,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_atoms == 0 {
            return Err(CoreError::config("n_atoms must be at least 1"));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(CoreError::config("kernel_size must be odd"));
        }
        if self.median_window.is_multiple_of(2) {
            return Err(CoreError::config("median_window must be odd"));
        }
        if !(self.sigma_g > 0.0) {
            return Err(CoreError::config("sigma_g must be positive"));
        }
        if self.scale == 0 {
            return Err(CoreError::config("scale must be at least 1"));
        }
        Ok(())
    }
}

/// One atom's kernel parameters in constrained form: `theta` in `[0, π)`,
/// both sigmas positive.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomKernelParams {
    pub theta: f64,
    pub sigma1: f64,
    pub sigma2: f64,
}

impl AtomKernelParams {
    pub fn new(theta: f64, sigma1: f64, sigma2: f64) -> Self {
        AtomKernelParams {
            theta,
            sigma1,
            sigma2,
        }
    }

    pub fn isotropic(sigma: f64) -> Self {
        Self::new(0.0, sigma, sigma)
    }
}

/// Learnable dictionary parameters, stored unconstrained as `[N, 3]` rows of
/// `(theta, raw_sigma1, raw_sigma2)`. Reads wrap theta mod π and map the
/// sigmas through softplus.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams<T: Real = f64> {
    raw: Tensor<T>,
}

impl<T: Real> KernelParams<T> {
    pub fn from_atoms(atoms: &[AtomKernelParams]) -> Result<Self> {
        if atoms.is_empty() {
            return Err(CoreError::config("kernel dictionary needs at least one atom"));
        }
        let mut raw = Vec::with_capacity(atoms.len() * 3);
        for a in atoms {
            if !(a.sigma1 > 0.0 && a.sigma2 > 0.0) {
                return Err(CoreError::config(format!("non-positive sigma in {:?}", a)));
            }
            raw.push(T::of(a.theta));
            raw.push(T::of(softplus_inv(a.sigma1)));
            raw.push(T::of(softplus_inv(a.sigma2)));
        }
        Ok(KernelParams {
            raw: Tensor::new([atoms.len(), 3], raw)?,
        })
    }

    pub fn from_raw(raw: Tensor<T>) -> Result<Self> {
        match raw.shape() {
            [n, 3] if *n > 0 => Ok(KernelParams { raw }),
            s => Err(CoreError::Tensor(TensorError::dim(
                "KernelParams::from_raw",
                format!("expected [N, 3], got {:?}", s),
            ))),
        }
    }

    pub fn raw(&self) -> &Tensor<T> {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut Tensor<T> {
        &mut self.raw
    }

    pub fn n_atoms(&self) -> usize {
        self.raw.shape()[0]
    }

    pub fn atoms(&self) -> Vec<AtomKernelParams> {
        self.raw
            .data()
            .chunks(3)
            .map(|r| {
                AtomKernelParams::new(
                    wrap_angle(r[0].as_f64()),
                    softplus(r[1].as_f64()),
                    softplus(r[2].as_f64()),
                )
            })
            .collect()
    }
}

fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(PI);
    // rem_euclid can round up to exactly π
    if t >= PI {
        0.0
    } else {
        t
    }
}

/// Constrained view of raw `[N, 3]` parameters (theta wrapped, sigmas
/// softplus'd). Wrapping is piecewise identity, so its derivative is 1.
pub fn constrain_params<'t, T: Real>(raw: Var<'t, T>) -> Result<Var<'t, T>> {
    let v = raw.value();
    if !matches!(v.shape(), [_, 3]) {
        return Err(TensorError::dim("constrain_params", format!("{:?}", v.shape())).into());
    }
    let mut out = v.data().to_vec();
    for r in out.chunks_mut(3) {
        r[0] = T::of(wrap_angle(r[0].as_f64()));
        r[1] = softplus(r[1]);
        r[2] = softplus(r[2]);
    }
    let out = Tensor::new(v.shape(), out)?;
    Ok(raw.tape().push_op(out, &[raw], move |g, _| {
        let mut gr = g.to_vec();
        for (gr, r) in gr.chunks_mut(3).zip(v.data().chunks(3)) {
            gr[1] *= svsr_tensor::sigmoid(r[1]);
            gr[2] *= svsr_tensor::sigmoid(r[2]);
        }
        vec![Some(gr)]
    }))
}

/// Unnormalized samples of the rotated product Gaussian on the centred
/// integer grid, with the rotated coordinates kept for differentiation.
struct GaussianGrid<T> {
    e: Vec<T>,
    u: Vec<T>,
    v: Vec<T>,
    sum: T,
}

fn gaussian_grid<T: Real>(theta: T, s1: T, s2: T, size: usize) -> GaussianGrid<T> {
    let half = (size / 2) as isize;
    let (sin, cos) = theta.sin_cos();
    let two = T::of(2.0);
    let n = size * size;
    let (mut e, mut u, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for row in 0..size {
        // row index is the vertical axis x2, column index the horizontal x1
        let x2 = T::of((row as isize - half) as f64);
        for col in 0..size {
            let x1 = T::of((col as isize - half) as f64);
            let uu = x1 * cos + x2 * sin;
            let vv = -x1 * sin + x2 * cos;
            e.push((-(uu * uu) / (two * s1 * s1) - (vv * vv) / (two * s2 * s2)).exp());
            u.push(uu);
            v.push(vv);
        }
    }
    let sum = e.iter().copied().sum();
    GaussianGrid { e, u, v, sum }
}

fn check_kernel_args(s1: f64, s2: f64, size: usize) -> Result<()> {
    if !(s1 > 0.0 && s2 > 0.0) {
        return Err(CoreError::Contract(format!(
            "kernel sigmas must be positive, got ({}, {})",
            s1, s2
        )));
    }
    if size.is_multiple_of(2) {
        return Err(CoreError::config(format!("kernel size {} must be odd", size)));
    }
    Ok(())
}

/// Discretizes one anisotropic Gaussian atom on a `size×size` grid,
/// normalized to unit sum.
///
/// The kernel is the product of two 1-D Gaussians along the rotated axes
/// `ν₁ = (cos θ, sin θ)` and `ν₂ = (−sin θ, cos θ)`; the `1/(√(2π)σ)`
/// prefactors cancel in the normalization.
pub fn synthesize_atom_kernel(params: &AtomKernelParams, size: usize) -> Result<Tensor<f64>> {
    check_kernel_args(params.sigma1, params.sigma2, size)?;
    let grid = gaussian_grid(params.theta, params.sigma1, params.sigma2, size);
    let data = grid.e.iter().map(|&e| e / grid.sum).collect();
    Ok(Tensor::new([size, size], data)?)
}

/// Differentiable kernel of atom `atom` from constrained `[N, 3]` params.
pub fn atom_kernel<'t, T: Real>(params: Var<'t, T>, atom: usize, size: usize) -> Result<Var<'t, T>> {
    let p = params.value();
    let n = p.shape()[0];
    if atom >= n {
        return Err(CoreError::Contract(format!("atom {} of {}", atom, n)));
    }
    let row = &p.data()[atom * 3..atom * 3 + 3];
    let (theta, s1, s2) = (row[0], row[1], row[2]);
    check_kernel_args(s1.as_f64(), s2.as_f64(), size)?;
    let grid = gaussian_grid(theta, s1, s2, size);
    let out: Vec<T> = grid.e.iter().map(|&e| e / grid.sum).collect();
    let kernel = Tensor::new([size, size], out.clone())?;
    Ok(params.tape().push_op(kernel, &[params], move |g, _| {
        // dL/dp = (1/S) Σ_j (g_j − Σ_k g_k k_k) · ∂e_j/∂p
        let gk: T = g.iter().zip(&out).map(|(a, b)| *a * *b).sum();
        let (is1, is2) = (T::one() / (s1 * s1), T::one() / (s2 * s2));
        let (mut dt, mut d1, mut d2) = (T::zero(), T::zero(), T::zero());
        for j in 0..g.len() {
            let w = (g[j] - gk) * grid.e[j];
            let (u, v) = (grid.u[j], grid.v[j]);
            dt += w * u * v * (is2 - is1);
            d1 += w * u * u * is1 / s1;
            d2 += w * v * v * is2 / s2;
        }
        let mut gp = vec![T::zero(); n * 3];
        gp[atom * 3] = dt / grid.sum;
        gp[atom * 3 + 1] = d1 / grid.sum;
        gp[atom * 3 + 2] = d2 / grid.sum;
        vec![Some(gp)]
    }))
}

/// Discretized atoms `{g_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelDictionary {
    pub kernels: Vec<Tensor<f64>>,
    pub size: usize,
}

impl KernelDictionary {
    pub fn from_atoms(atoms: &[AtomKernelParams], size: usize) -> Result<Self> {
        let kernels = atoms
            .iter()
            .map(|a| synthesize_atom_kernel(a, size))
            .collect::<Result<Vec<_>>>()?;
        Ok(KernelDictionary { kernels, size })
    }

    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

/// Per-atom mixing weights `W_i` (each `[H, W]`) and the texture map they
/// were derived from.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMaps {
    pub maps: Vec<Tensor<f64>>,
    pub texture: Tensor<f64>,
}

impl CoefficientMaps {
    /// `n` uniform maps of `1/n`; with `n = 1` this is the all-ones map.
    pub fn uniform(n: usize, h: usize, w: usize) -> Self {
        CoefficientMaps {
            maps: vec![Tensor::full([h, w], 1.0 / n as f64); n],
            texture: Tensor::zeros([h, w]),
        }
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        let s = self.texture.shape();
        (s[0], s[1])
    }
}

/// BT.601 luma weights. Only relative magnitudes matter here since the
/// texture map is min-max normalized.
fn luma_plane(x: &Tensor<f64>) -> Result<Vec<f64>> {
    let (c, h, w) = x.dims3()?;
    match c {
        1 => Ok(x.data().to_vec()),
        3 => Ok((0..h * w)
            .map(|i| 0.299 * x.plane(0)[i] + 0.587 * x.plane(1)[i] + 0.114 * x.plane(2)[i])
            .collect()),
        _ => Err(TensorError::dim("texture_feature", format!("{} channels", c)).into()),
    }
}

/// Texture map `h(x̃)` in `[0, 1]`: gradient magnitude of the luma channel
/// (forward differences, zero past the last row/column), median filtered
/// over a `window×window` neighbourhood with replicated borders, then
/// min-max normalized. A constant image gives all zeros.
pub fn texture_feature(x: &Tensor<f64>, window: usize) -> Result<Tensor<f64>> {
    if window.is_multiple_of(2) {
        return Err(CoreError::config("median window must be odd"));
    }
    let (_, h, w) = x.dims3()?;
    let y = luma_plane(x)?;
    let mut grad = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let v = y[r * w + c];
            let gx = if c + 1 < w { y[r * w + c + 1] - v } else { 0.0 };
            let gy = if r + 1 < h { y[(r + 1) * w + c] - v } else { 0.0 };
            grad[r * w + c] = (gx * gx + gy * gy).sqrt();
        }
    }
    let half = (window / 2) as isize;
    let mut win = Vec::with_capacity(window * window);
    let mut med = vec![0.0; h * w];
    for r in 0..h as isize {
        for c in 0..w as isize {
            win.clear();
            for dr in -half..=half {
                let rr = (r + dr).clamp(0, h as isize - 1) as usize;
                for dc in -half..=half {
                    let cc = (c + dc).clamp(0, w as isize - 1) as usize;
                    win.push(grad[rr * w + cc]);
                }
            }
            let mid = win.len() / 2;
            let (_, m, _) = win.select_nth_unstable_by(mid, f64::total_cmp);
            med[r as usize * w + c as usize] = *m;
        }
    }
    let lo = med.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = med.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let out = if span > 0.0 {
        med.iter().map(|v| (v - lo) / span).collect()
    } else {
        vec![0.0; h * w]
    };
    Ok(Tensor::new([h, w], out)?)
}

/// Fuzzy membership of each pixel in atom `atom` (0-based):
/// `exp(−(N−1)/(2σ_g²) · (h − atom/(N−1))²)`.
pub fn membership(texture: &Tensor<f64>, atom: usize, n_atoms: usize, sigma_g: f64) -> Result<Tensor<f64>> {
    if n_atoms < 2 {
        return Err(CoreError::Contract(
            "membership needs at least two atoms; a single atom uses the all-ones map".into(),
        ));
    }
    if atom >= n_atoms {
        return Err(CoreError::Contract(format!("atom {} of {}", atom, n_atoms)));
    }
    let m = (n_atoms - 1) as f64;
    let centre = atom as f64 / m;
    let k = m / (2.0 * sigma_g * sigma_g);
    Ok(texture.map(|h| (-k * (h - centre) * (h - centre)).exp()))
}

/// Coefficient maps from a tentative HR image `[3, H, W]`: memberships
/// normalized to sum to one at every pixel. The maps carry no gradient.
pub fn coefficient_maps(x_tilde: &Tensor<f64>, cfg: &DegradationConfig) -> Result<CoefficientMaps> {
    let texture = texture_feature(x_tilde, cfg.median_window)?;
    let [h, w] = *texture.shape() else { unreachable!() };
    if cfg.n_atoms == 1 {
        return Ok(CoefficientMaps {
            maps: vec![Tensor::ones([h, w])],
            texture,
        });
    }
    let mus = (0..cfg.n_atoms)
        .map(|i| membership(&texture, i, cfg.n_atoms, cfg.sigma_g))
        .collect::<Result<Vec<_>>>()?;
    let mut total = vec![0.0; h * w];
    for mu in &mus {
        total.iter_mut().zip(mu.data()).for_each(|(t, v)| *t += v);
    }
    let maps = mus
        .into_iter()
        .map(|mu| {
            let d = mu.data().iter().zip(&total).map(|(v, t)| v / t).collect();
            Tensor::new([h, w], d).expect("same shape")
        })
        .collect();
    Ok(CoefficientMaps { maps, texture })
}

/// `(Σ_i W_i ⊙ (g_i ⋆ x))↓s` on the tape. `x` is `[C, H, W]`; the result is
/// `[C, H/s, W/s]`.
pub fn apply_degradation<'t, T: Real>(
    x: Var<'t, T>,
    kernels: &[Var<'t, T>],
    maps: &CoefficientMaps,
    scale: usize,
) -> Result<Var<'t, T>> {
    let (_, h, w) = match x.shape()[..] {
        [c, h, w] => (c, h, w),
        ref s => return Err(TensorError::dim("apply_degradation", format!("{:?}", s)).into()),
    };
    if kernels.len() != maps.len() || kernels.is_empty() {
        return Err(TensorError::dim(
            "apply_degradation",
            format!("{} kernels for {} maps", kernels.len(), maps.len()),
        )
        .into());
    }
    if maps.dims() != (h, w) {
        return Err(TensorError::dim(
            "apply_degradation",
            format!("maps are {:?}, image is {}x{}", maps.dims(), h, w),
        )
        .into());
    }
    if scale == 0 || h % scale != 0 || w % scale != 0 {
        return Err(TensorError::dim(
            "apply_degradation",
            format!("{}x{} is not divisible by scale {}", h, w, scale),
        )
        .into());
    }
    // decimation commutes with the per-pixel weighting, so blur only at the kept pixels
    let tape = x.tape();
    let (ho, wo) = (h / scale, w / scale);
    let mut acc: Option<Var<'t, T>> = None;
    for (k, m) in kernels.iter().zip(&maps.maps) {
        let blurred = x.blur2d_strided(*k, Padding::Replicate, scale)?;
        let md = Tensor::from_fn([ho, wo], |i| T::of(m.data()[(i / wo) * scale * w + (i % wo) * scale]));
        let term = blurred.mul_plane(tape.constant(md))?;
        acc = Some(match acc {
            None => term,
            Some(a) => a.add(term)?,
        });
    }
    Ok(acc.expect("at least one atom"))
}

/// [`apply_degradation`] on plain tensors.
pub fn degrade_with(
    x: &Tensor<f64>,
    dict: &KernelDictionary,
    maps: &CoefficientMaps,
    scale: usize,
) -> Result<Tensor<f64>> {
    let tape = Tape::<f64>::new();
    let kernels: Vec<_> = dict.kernels.iter().map(|k| tape.constant(k.clone())).collect();
    let out = apply_degradation(tape.constant(x.clone()), &kernels, maps, scale)?;
    Ok((*out.value()).clone())
}
