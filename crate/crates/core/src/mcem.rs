//! Likelihood, kernel prior, SGLD E-step, weighted M-step and the outer
//! MCEM loop.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use svsr_tensor::{Real, Tape, Tensor, Var};

use crate::degradation::{
    apply_degradation, atom_kernel, coefficient_maps, constrain_params, synthesize_atom_kernel,
    AtomKernelParams, CoefficientMaps, DegradationConfig, KernelParams,
};
use crate::error::{CoreError, Result};
use crate::generator::{image_prior_energy, latent_prior_energy, GeneratorConfig, GeneratorState, PriorConfig};
use crate::imageops::{bicubic_upsample, crop, pad_replicate, round_up};
use crate::metrics::{psnr_y, ssim_y};

/// Starting widths of every blind atom; orientations are spread over
/// `[0, π)`.
const BLIND_INIT_SIGMAS: (f64, f64) = (1.6, 1.4);

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FftNorm {
    /// Unitary transform; the frequency residual then has the same norm as
    /// the spatial one.
    #[default]
    Ortho,
    /// Forward transform without scaling, i.e. `√(hw)` times the unitary one.
    Unnormalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LikelihoodConfig {
    pub sigma_y: f64,
    pub sigma_f: f64,
    /// Include the frequency-domain fidelity term.
    pub frequency_term: bool,
    pub fft_norm: FftNorm,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        LikelihoodConfig {
            sigma_y: 1.0,
            sigma_f: 2.0,
            frequency_term: true,
            fft_norm: FftNorm::Ortho,
        }
    }
}

impl LikelihoodConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_y > 0.0 && self.sigma_f > 0.0) {
            return Err(CoreError::config("sigma_y and sigma_f must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    #[default]
    Blind,
    NonBlind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelPriorConfig {
    pub mode: KernelMode,
    pub sigma_gamma: f64,
    /// Fixed kernel for non-blind runs, shared by every atom.
    pub ground_truth: Option<AtomKernelParams>,
}

impl Default for KernelPriorConfig {
    fn default() -> Self {
        KernelPriorConfig {
            mode: KernelMode::Blind,
            sigma_gamma: 1.5,
            ground_truth: None,
        }
    }
}

impl KernelPriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_gamma > 0.0) {
            return Err(CoreError::config("sigma_gamma must be positive"));
        }
        match (self.mode, &self.ground_truth) {
            (KernelMode::NonBlind, None) => Err(CoreError::config("non_blind mode needs ground_truth kernel parameters")),
            (_, Some(g)) if !(g.sigma1 > 0.0 && g.sigma2 > 0.0) => {
                Err(CoreError::config("ground_truth sigmas must be positive"))
            }
            _ => Ok(()),
        }
    }

    pub fn is_blind(&self) -> bool {
        self.mode == KernelMode::Blind
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McemConfig {
    pub alpha: f64,
    pub n_z: usize,
    pub lr_gamma: f64,
    pub lr_phi: f64,
    pub max_iters: usize,
    pub a: f64,
    pub b: f64,
    pub recompute_w_every: usize,
    pub freeze_w: bool,
    pub record_every: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for McemConfig {
    fn default() -> Self {
        McemConfig {
            alpha: 1.5,
            n_z: 5,
            lr_gamma: 2e-3,
            lr_phi: 5e-3,
            max_iters: 5000,
            a: 45000.0,
            b: 8000.0,
            recompute_w_every: 100,
            freeze_w: false,
            record_every: 10,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl McemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(CoreError::config("alpha must be a non-negative number"));
        }
        if !(self.lr_gamma > 0.0 && self.lr_phi > 0.0) {
            return Err(CoreError::config("learning rates must be positive"));
        }
        if self.n_z == 0 || self.recompute_w_every == 0 || self.record_every == 0 {
            return Err(CoreError::config("n_z, recompute_w_every and record_every must be positive"));
        }
        if !(self.a.is_finite() && self.b > 0.0) {
            return Err(CoreError::config("fidelity weights need finite a and positive b"));
        }
        Ok(())
    }
}

/// Everything a single inference run needs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub degradation: DegradationConfig,
    pub prior: PriorConfig,
    pub generator: GeneratorConfig,
    pub likelihood: LikelihoodConfig,
    pub kernel_prior: KernelPriorConfig,
    pub mcem: McemConfig,
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        self.degradation.validate()?;
        self.prior.validate()?;
        self.generator.validate()?;
        self.likelihood.validate()?;
        self.kernel_prior.validate()?;
        self.mcem.validate()
    }
}

/// Fixed data for energy evaluation: the observation, the current maps and
/// the pixelwise M-step weight derived from them.
#[derive(Clone, Debug)]
pub struct EnergyContext<T: Real = f64> {
    y: Tensor<T>,
    maps: CoefficientMaps,
    omega: Tensor<T>,
    scale: usize,
    a: f64,
    b: f64,
}

impl<T: Real> EnergyContext<T> {
    /// `y` is the `[3, h, w]` observation; maps live on the (possibly
    /// padded) HR grid, which must cover `s·h × s·w`.
    pub fn new(y: &Tensor<f64>, maps: CoefficientMaps, scale: usize, a: f64, b: f64) -> Result<Self> {
        let mut ctx = EnergyContext {
            y: y.cast(),
            maps: CoefficientMaps::uniform(1, 1, 1),
            omega: Tensor::zeros([1, 1]),
            scale,
            a,
            b,
        };
        ctx.set_maps(maps)?;
        Ok(ctx)
    }

    pub fn set_maps(&mut self, maps: CoefficientMaps) -> Result<()> {
        let (_, h, w) = self.y.dims3()?;
        let (hh, ww) = maps.dims();
        let s = self.scale;
        if hh % s != 0 || ww % s != 0 || hh / s < h || ww / s < w {
            return Err(CoreError::Contract(format!(
                "maps of {}x{} do not cover a {}x{} observation at scale {}",
                hh, ww, h, w, s
            )));
        }
        // nearest-neighbour decimation of the highest-texture map
        let last = maps.maps.last().expect("at least one map");
        let mut omega = Vec::with_capacity(h * w);
        for r in 0..h {
            for c in 0..w {
                let v = last.data()[r * s * ww + c * s];
                omega.push(T::of(self.a * v.ln_1p() + self.b));
            }
        }
        self.omega = Tensor::new([h, w], omega)?;
        self.maps = maps;
        Ok(())
    }

    pub fn maps(&self) -> &CoefficientMaps {
        &self.maps
    }

    pub fn omega(&self) -> &Tensor<T> {
        &self.omega
    }

    pub fn observation(&self) -> &Tensor<T> {
        &self.y
    }
}

/// Individual energy terms on the tape, with `total` their sum.
pub struct Energy<'t, T: Real> {
    pub total: Var<'t, T>,
    pub spatial: Var<'t, T>,
    pub frequency: Option<Var<'t, T>>,
    pub tv: Var<'t, T>,
    pub latent: Option<Var<'t, T>>,
    pub kernel_prior: Option<Var<'t, T>>,
    /// The generator output the energy was evaluated at.
    pub image: Var<'t, T>,
}

/// Scalar values of the energy terms (absent terms are 0).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyValues {
    pub total: f64,
    pub spatial: f64,
    pub frequency: f64,
    pub tv: f64,
    pub latent: f64,
    pub kernel_prior: f64,
}

impl<T: Real> Energy<'_, T> {
    pub fn values(&self) -> EnergyValues {
        let get = |v: Option<Var<'_, T>>| v.map_or(0.0, |v| v.item().as_f64());
        EnergyValues {
            total: self.total.item().as_f64(),
            spatial: self.spatial.item().as_f64(),
            frequency: get(self.frequency),
            tv: self.tv.item().as_f64(),
            latent: get(self.latent),
            kernel_prior: get(self.kernel_prior),
        }
    }
}

impl EnergyValues {
    pub fn is_finite(&self) -> bool {
        [self.total, self.spatial, self.frequency, self.tv, self.latent, self.kernel_prior]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// `y − ((D x)↓s)` restricted to the observed window.
fn residual<'t, T: Real>(ctx: &EnergyContext<T>, x: Var<'t, T>, kernels: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let (_, h, w) = ctx.y.dims3()?;
    let dx = apply_degradation(x, kernels, &ctx.maps, ctx.scale)?.crop2d(0, 0, h, w)?;
    Ok(x.tape().constant(ctx.y.clone()).sub(dx)?)
}

fn frequency_energy<'t, T: Real>(r: Var<'t, T>, cfg: &LikelihoodConfig) -> Result<Option<Var<'t, T>>> {
    if !cfg.frequency_term {
        return Ok(None);
    }
    let s = r.shape();
    let gain = match cfg.fft_norm {
        FftNorm::Ortho => 1.0,
        FftNorm::Unnormalized => (s[1] * s[2]) as f64,
    };
    let e = r.fft2()?.norm_sq()?;
    Ok(Some(e.scale(T::of(gain / (2.0 * cfg.sigma_f * cfg.sigma_f)))))
}

fn sum_terms<'t, T: Real>(terms: &[Option<Var<'t, T>>]) -> Result<Var<'t, T>> {
    let mut acc: Option<Var<'t, T>> = None;
    for t in terms.iter().flatten() {
        acc = Some(match acc {
            None => *t,
            Some(a) => a.add(*t)?,
        });
    }
    Ok(acc.expect("at least one term"))
}

/// Negative log posterior of `z` with `φ` and the kernels held fixed:
/// spatial and frequency fidelity, TV on `G(z; φ)`, and the latent prior.
pub fn z_posterior_energy<'t, T: Real>(
    ctx: &EnergyContext<T>,
    gen: &GeneratorState<T>,
    phi: &[Var<'t, T>],
    z: Var<'t, T>,
    kernels: &[Var<'t, T>],
    cfg: &InferenceConfig,
) -> Result<Energy<'t, T>> {
    let x = gen.forward_on(phi, z)?;
    let r = residual(ctx, x, kernels)?;
    let sy = cfg.likelihood.sigma_y;
    let spatial = r.sum_squares().scale(T::of(0.5 / (sy * sy)));
    let frequency = frequency_energy(r, &cfg.likelihood)?;
    let tv = image_prior_energy(x, &cfg.prior)?;
    let latent = latent_prior_energy(z, &cfg.prior);
    let total = sum_terms(&[Some(spatial), frequency, Some(tv), Some(latent)])?;
    Ok(Energy {
        total,
        spatial,
        frequency,
        tv,
        latent: Some(latent),
        kernel_prior: None,
        image: x,
    })
}

/// `(1/(2σ_γ²)) (Σ θ_i² + Σ σ_{i,l}²)` over constrained `[N, 3]` params.
pub fn kernel_prior_energy<'t, T: Real>(constrained: Var<'t, T>, cfg: &KernelPriorConfig) -> Result<Var<'t, T>> {
    if !cfg.is_blind() {
        return Err(CoreError::Contract("the kernel prior is only defined in blind mode".into()));
    }
    Ok(constrained.sum_squares().scale(T::of(0.5 / (cfg.sigma_gamma * cfg.sigma_gamma))))
}

/// M-step objective: ω-weighted spatial fidelity, frequency fidelity, TV,
/// and (blind mode, when `constrained` is given) the kernel prior.
#[allow(clippy::too_many_arguments)]
pub fn mstep_energy<'t, T: Real>(
    ctx: &EnergyContext<T>,
    gen: &GeneratorState<T>,
    phi: &[Var<'t, T>],
    z: Var<'t, T>,
    kernels: &[Var<'t, T>],
    constrained: Option<Var<'t, T>>,
    cfg: &InferenceConfig,
) -> Result<Energy<'t, T>> {
    let tape = z.tape();
    let x = gen.forward_on(phi, z)?;
    let r = residual(ctx, x, kernels)?;
    let sy = cfg.likelihood.sigma_y;
    let spatial = r
        .square()
        .mul_plane(tape.constant(ctx.omega.clone()))?
        .sum()
        .scale(T::of(0.5 / (sy * sy)));
    let frequency = frequency_energy(r, &cfg.likelihood)?;
    let tv = image_prior_energy(x, &cfg.prior)?;
    let kernel_prior = match constrained {
        Some(c) if cfg.kernel_prior.is_blind() => Some(kernel_prior_energy(c, &cfg.kernel_prior)?),
        _ => None,
    };
    let total = sum_terms(&[Some(spatial), frequency, Some(tv), kernel_prior])?;
    Ok(Energy {
        total,
        spatial,
        frequency,
        tv,
        latent: None,
        kernel_prior,
        image: x,
    })
}

/// Langevin updates `z ← z − α ∂E/∂z + √(2α) ζ`, `ζ ~ N(0, I)`, drawing
/// exactly `n_z · numel(z)` standard normals from `rng` when `noise` is set.
pub fn sgld_sample<T: Real, R: Rng>(
    mut z: Tensor<T>,
    mut grad: impl FnMut(&Tensor<T>) -> Result<Tensor<T>>,
    alpha: f64,
    n_z: usize,
    rng: &mut R,
    noise: bool,
) -> Result<Tensor<T>> {
    let amp = (2.0 * alpha).sqrt();
    for step in 0..n_z {
        let g = grad(&z)?;
        if g.shape() != z.shape() {
            return Err(CoreError::Contract(format!("gradient shape {:?} for z {:?}", g.shape(), z.shape())));
        }
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(CoreError::NonFinite {
                what: "latent gradient",
                iteration: step,
            });
        }
        for (zv, gv) in z.data_mut().iter_mut().zip(g.data()) {
            let mut v = zv.as_f64() - alpha * gv.as_f64();
            if noise {
                let zeta: f64 = rng.sample(StandardNormal);
                v += amp * zeta;
            }
            *zv = T::of(v);
        }
    }
    Ok(z)
}

/// ADAM with bias correction; moments are kept in `f64`.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    pub fn step<T: Real>(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(CoreError::Contract(format!("{} params, {} grads", params.len(), grads.len())));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != params.len() {
            return Err(CoreError::Contract("parameter set changed between ADAM steps".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(CoreError::Contract(format!("grad {:?} for param {:?}", g.shape(), p.shape())));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (pv, gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gv = gv.as_f64();
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gv;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gv * gv;
                let upd = self.lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
                *pv = T::of(pv.as_f64() - upd);
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub energy: EnergyValues,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted { iteration: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct InferenceReport {
    pub records: Vec<IterationRecord>,
    /// Final HR estimate `[3, s·h, s·w]`.
    pub image: Tensor<f64>,
    pub kernels: Vec<AtomKernelParams>,
    /// Final maps cropped to the output size.
    pub maps: CoefficientMaps,
    pub status: RunStatus,
    pub iterations_run: usize,
    pub elapsed_secs: f64,
}

/// Per-100-iteration progress line.
#[derive(Clone, Copy, Debug)]
pub struct Progress {
    pub iteration: usize,
    pub energy: f64,
    pub psnr: Option<f64>,
}

/// Initial kernel parameters: the ground truth replicated to every atom in
/// non-blind mode, otherwise orientations `iπ/N` at fixed widths.
pub fn initial_kernel_params(cfg: &InferenceConfig) -> Result<Vec<AtomKernelParams>> {
    let n = cfg.degradation.n_atoms;
    Ok(match (&cfg.kernel_prior.mode, cfg.kernel_prior.ground_truth) {
        (KernelMode::NonBlind, Some(gt)) => vec![gt; n],
        (KernelMode::NonBlind, None) => return Err(CoreError::config("non_blind mode needs ground_truth")),
        (KernelMode::Blind, _) => (0..n)
            .map(|i| {
                AtomKernelParams::new(
                    i as f64 * std::f64::consts::PI / n as f64,
                    BLIND_INIT_SIGMAS.0,
                    BLIND_INIT_SIGMAS.1,
                )
            })
            .collect(),
    })
}

fn crop_maps(maps: &CoefficientMaps, h: usize, w: usize) -> Result<CoefficientMaps> {
    let crop2 = |t: &Tensor<f64>| -> Result<Tensor<f64>> {
        let [hh, ww] = *t.shape() else { unreachable!() };
        crop(&t.clone().reshape([1, hh, ww])?, h, w)?.reshape([h, w]).map_err(Into::into)
    };
    Ok(CoefficientMaps {
        maps: maps.maps.iter().map(crop2).collect::<Result<_>>()?,
        texture: crop2(&maps.texture)?,
    })
}

/// Runs MCEM on the `[3, h, w]` observation `y`. With `ground_truth_hr`
/// (`[3, s·h, s·w]`) the trajectory also carries PSNR/SSIM.
pub fn run_mcem(
    y: &Tensor<f64>,
    cfg: &InferenceConfig,
    ground_truth_hr: Option<&Tensor<f64>>,
    progress: &mut dyn FnMut(&Progress),
) -> Result<InferenceReport> {
    match cfg.mcem.precision {
        Precision::F32 => run_mcem_typed::<f32>(y, cfg, ground_truth_hr, progress),
        Precision::F64 => run_mcem_typed::<f64>(y, cfg, ground_truth_hr, progress),
    }
}

fn run_mcem_typed<T: Real>(
    y: &Tensor<f64>,
    cfg: &InferenceConfig,
    ground_truth_hr: Option<&Tensor<f64>>,
    progress: &mut dyn FnMut(&Progress),
) -> Result<InferenceReport> {
    let start = Instant::now();
    cfg.validate()?;
    let (c, h, w) = y.dims3()?;
    if c != 3 {
        return Err(CoreError::Contract(format!("expected an RGB observation, got {} channels", c)));
    }
    let s = cfg.degradation.scale;
    let (ho, wo) = (s * h, s * w);
    if let Some(gt) = ground_truth_hr {
        if gt.shape() != [3, ho, wo] {
            return Err(CoreError::Contract(format!(
                "ground truth {:?} does not match output [3, {}, {}]",
                gt.shape(),
                ho,
                wo
            )));
        }
    }
    let (hp, wp) = (round_up(ho, 4 * s), round_up(wo, 4 * s));
    let guide = pad_replicate(&bicubic_upsample(y, s)?, hp, wp)?;
    let maps = coefficient_maps(&guide, &cfg.degradation)?;

    let mut gen = GeneratorState::<T>::init(&cfg.generator, hp, wp, cfg.mcem.seed)?;
    gen.set_guide(guide.cast())?;
    gen.set_latent(maps.maps[0].clone().reshape([1, hp, wp])?.cast())?;
    let mut ctx = EnergyContext::<T>::new(y, maps, s, cfg.mcem.a, cfg.mcem.b)?;

    let blind = cfg.kernel_prior.is_blind();
    let mut kparams = KernelParams::<T>::from_atoms(&initial_kernel_params(cfg)?)?;
    let ksize = cfg.degradation.kernel_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.mcem.seed);
    rng.set_stream(1);
    let mut adam_phi = Adam::new(cfg.mcem.lr_phi);
    let mut adam_gamma = Adam::new(cfg.mcem.lr_gamma);

    let out_crop = |x: &Tensor<T>| crop(&x.cast(), ho, wo);
    let mut last_image = out_crop(&gen.forward()?)?;
    let mut records = Vec::new();
    let mut status = RunStatus::Completed;
    let mut iterations_run = 0;

    for t in 0..cfg.mcem.max_iters {
        // E-step
        let fixed_kernels = kparams
            .atoms()
            .iter()
            .map(|a| synthesize_atom_kernel(a, ksize).map(|k| k.cast::<T>()))
            .collect::<Result<Vec<_>>>()?;
        let grad_z = |z: &Tensor<T>| -> Result<Tensor<T>> {
            let tape = Tape::new();
            let phi = gen.bind(&tape, false);
            let kv: Vec<_> = fixed_kernels.iter().map(|k| tape.constant(k.clone())).collect();
            let zv = tape.param(z.clone());
            let e = z_posterior_energy(&ctx, &gen, &phi, zv, &kv, cfg)?;
            tape.backward(e.total)?;
            Ok(tape.grad_or_zeros(zv))
        };
        let z = match sgld_sample(gen.z.clone(), grad_z, cfg.mcem.alpha, cfg.mcem.n_z, &mut rng, true) {
            Ok(z) => z,
            Err(CoreError::NonFinite { what, .. }) => {
                status = RunStatus::Aborted {
                    iteration: t,
                    reason: format!("non-finite {what}"),
                };
                break;
            }
            Err(e) => return Err(e),
        };
        if z.data().iter().any(|v| !v.is_finite()) {
            status = RunStatus::Aborted {
                iteration: t,
                reason: "non-finite latent".into(),
            };
            break;
        }
        gen.z = z;

        // M-step
        let tape = Tape::new();
        let phi = gen.bind(&tape, true);
        let raw = if blind {
            tape.param(kparams.raw().clone())
        } else {
            tape.constant(kparams.raw().clone())
        };
        let constrained = constrain_params(raw)?;
        let kernels = (0..kparams.n_atoms())
            .map(|i| atom_kernel(constrained, i, ksize))
            .collect::<Result<Vec<_>>>()?;
        let zv = tape.constant(gen.z.clone());
        let energy = mstep_energy(&ctx, &gen, &phi, zv, &kernels, blind.then_some(constrained), cfg)?;
        let values = energy.values();
        let image = energy.image.value();
        if !values.is_finite() || image.data().iter().any(|v| !v.is_finite()) {
            status = RunStatus::Aborted {
                iteration: t,
                reason: "non-finite M-step energy".into(),
            };
            break;
        }
        last_image = out_crop(&image)?;
        tape.backward(energy.total)?;
        let grads: Vec<_> = phi.iter().map(|p| tape.grad_or_zeros(*p)).collect();
        let g_gamma = blind.then(|| tape.grad_or_zeros(raw));
        let finite = |g: &Tensor<T>| g.data().iter().all(|v| v.is_finite());
        if !grads.iter().all(finite) || !g_gamma.iter().all(finite) {
            status = RunStatus::Aborted {
                iteration: t,
                reason: "non-finite M-step gradient".into(),
            };
            break;
        }
        adam_phi.step(&mut gen.params, &grads)?;
        if let Some(g) = g_gamma {
            adam_gamma.step(std::slice::from_mut(kparams.raw_mut()), &[g])?;
        }
        iterations_run = t + 1;

        let want_record = t % cfg.mcem.record_every == 0 || t + 1 == cfg.mcem.max_iters;
        let want_progress = (t + 1) % 100 == 0;
        if want_record || want_progress {
            let (psnr, ssim) = match ground_truth_hr {
                Some(gt) => (Some(psnr_y(gt, &last_image, s)?), Some(ssim_y(gt, &last_image, s)?)),
                None => (None, None),
            };
            if want_record {
                records.push(IterationRecord {
                    iteration: t,
                    energy: values,
                    psnr,
                    ssim,
                });
            }
            if want_progress {
                progress(&Progress {
                    iteration: t + 1,
                    energy: values.total,
                    psnr,
                });
            }
        }

        if !cfg.mcem.freeze_w && (t + 1) % cfg.mcem.recompute_w_every == 0 {
            let x_tilde: Tensor<f64> = gen.forward()?.cast();
            ctx.set_maps(coefficient_maps(&x_tilde, &cfg.degradation)?)?;
        }
    }

    let image = if status == RunStatus::Completed {
        let x = out_crop(&gen.forward()?)?;
        if x.data().iter().all(|v| v.is_finite()) {
            x
        } else {
            status = RunStatus::Aborted {
                iteration: iterations_run,
                reason: "non-finite output".into(),
            };
            last_image
        }
    } else {
        last_image
    };
    Ok(InferenceReport {
        records,
        image,
        kernels: kparams.atoms(),
        maps: crop_maps(ctx.maps(), ho, wo)?,
        status,
        iterations_run,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}
