//! Run configuration: defaults, TOML/JSON files, flag overrides and the
//! resolved echo written next to every run.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use svsr_core::degradation::{AtomKernelParams, DegradationConfig};
use svsr_core::generator::{GeneratorConfig, PriorConfig};
use svsr_core::mcem::{FftNorm, InferenceConfig, KernelMode, KernelPriorConfig, LikelihoodConfig, McemConfig, Precision};
use svsr_core::synth::SynthesisSpec;

use crate::error::{CliError, Result};

/// File name of the resolved configuration inside a run directory.
pub const RESOLVED_CONFIG: &str = "config.resolved.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationFlags {
    pub no_freq_likelihood: bool,
    pub plain_skip: bool,
    pub no_instance_norm: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoPaths {
    /// Observed LR image for `sr`.
    pub input: Option<PathBuf>,
    /// HR reference; enables PSNR/SSIM in the trajectory.
    pub ground_truth: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub degradation: DegradationConfig,
    pub prior: PriorConfig,
    pub generator: GeneratorConfig,
    pub likelihood: LikelihoodConfig,
    pub kernel_prior: KernelPriorConfig,
    pub mcem: McemConfig,
    pub synthesis: SynthesisSpec,
    pub ablation: AblationFlags,
    pub io: IoPaths,
}

impl RunConfig {
    /// Reads a `.json` file (e.g. a resolved config) or TOML otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config {
            path: path.into(),
            source: e.into(),
        })?;
        let wrap = |e: Box<dyn std::error::Error + Send + Sync>| CliError::Config {
            path: path.into(),
            source: e,
        };
        if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| wrap(e.into()))
        } else {
            toml::from_str(&text).map_err(|e| wrap(e.into()))
        }
    }

    /// The inference configuration with ablation flags folded in.
    pub fn inference(&self) -> InferenceConfig {
        let mut cfg = InferenceConfig {
            degradation: self.degradation.clone(),
            prior: self.prior.clone(),
            generator: self.generator.clone(),
            likelihood: self.likelihood.clone(),
            kernel_prior: self.kernel_prior.clone(),
            mcem: self.mcem.clone(),
        };
        if self.ablation.no_freq_likelihood {
            cfg.likelihood.frequency_term = false;
        }
        if self.ablation.plain_skip {
            cfg.generator.freq_skip = false;
        }
        if self.ablation.no_instance_norm {
            cfg.generator.instance_norm = false;
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.inference().validate()?;
        self.synthesis.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn parse_kernel(s: &str) -> std::result::Result<AtomKernelParams, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [theta, s1, s2] if s1 > 0.0 && s2 > 0.0 => Ok(AtomKernelParams::new(theta, s1, s2)),
        [_, _, _] => Err("sigmas must be positive".into()),
        _ => Err("expected THETA,SIGMA1,SIGMA2".into()),
    }
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        _ => Err(format!("unknown precision {s:?} (f32 or f64)")),
    }
}

fn parse_fft_norm(s: &str) -> std::result::Result<FftNorm, String> {
    match s {
        "ortho" => Ok(FftNorm::Ortho),
        "unnormalized" => Ok(FftNorm::Unnormalized),
        _ => Err(format!("unknown fft norm {s:?} (ortho or unnormalized)")),
    }
}

/// Flags that override file values. Unset flags leave the file (or the
/// default) untouched.
#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    /// TOML config file, or a `config.resolved.json` from an earlier run.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub scale: Option<usize>,
    /// Number of atom kernels.
    #[arg(long)]
    pub n_atoms: Option<usize>,
    #[arg(long)]
    pub kernel_size: Option<usize>,
    /// Median window of the texture feature.
    #[arg(long)]
    pub median_window: Option<usize>,
    #[arg(long)]
    pub sigma_g: Option<f64>,
    #[arg(long)]
    pub sigma_y: Option<f64>,
    #[arg(long)]
    pub sigma_f: Option<f64>,
    #[arg(long)]
    pub sigma_x: Option<f64>,
    #[arg(long)]
    pub sigma_z: Option<f64>,
    #[arg(long)]
    pub sigma_gamma: Option<f64>,
    /// SGLD step size.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// SGLD steps per E-step.
    #[arg(long)]
    pub n_z: Option<usize>,
    #[arg(long)]
    pub lr_gamma: Option<f64>,
    #[arg(long)]
    pub lr_phi: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub recompute_w_every: Option<usize>,
    /// Keep the coefficient maps from the initial guide.
    #[arg(long)]
    pub freeze_w: bool,
    #[arg(long)]
    pub record_every: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Arithmetic precision of the inference loop: f32 or f64.
    #[arg(long, value_parser = parse_precision)]
    pub precision: Option<Precision>,
    /// Scaling of the frequency residual: ortho or unnormalized.
    #[arg(long, value_parser = parse_fft_norm)]
    pub fft_norm: Option<FftNorm>,
    /// Known kernel `THETA,SIGMA1,SIGMA2`; switches to non-blind mode.
    #[arg(long, value_parser = parse_kernel, allow_hyphen_values = true)]
    pub gt_kernel: Option<AtomKernelParams>,
    #[arg(long)]
    pub no_freq_likelihood: bool,
    #[arg(long)]
    pub plain_skip: bool,
    #[arg(long)]
    pub no_instance_norm: bool,
}

impl Overrides {
    /// Loads the config file (if any) and applies the flags on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg);
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        fn set<T: Clone>(dst: &mut T, v: &Option<T>) {
            if let Some(v) = v {
                *dst = v.clone();
            }
        }
        set(&mut cfg.degradation.scale, &self.scale);
        set(&mut cfg.synthesis.scale, &self.scale);
        set(&mut cfg.degradation.n_atoms, &self.n_atoms);
        set(&mut cfg.degradation.kernel_size, &self.kernel_size);
        set(&mut cfg.degradation.median_window, &self.median_window);
        set(&mut cfg.degradation.sigma_g, &self.sigma_g);
        set(&mut cfg.likelihood.sigma_y, &self.sigma_y);
        set(&mut cfg.likelihood.sigma_f, &self.sigma_f);
        set(&mut cfg.likelihood.fft_norm, &self.fft_norm);
        set(&mut cfg.prior.sigma_x, &self.sigma_x);
        set(&mut cfg.prior.sigma_z, &self.sigma_z);
        set(&mut cfg.kernel_prior.sigma_gamma, &self.sigma_gamma);
        set(&mut cfg.mcem.alpha, &self.alpha);
        set(&mut cfg.mcem.n_z, &self.n_z);
        set(&mut cfg.mcem.lr_gamma, &self.lr_gamma);
        set(&mut cfg.mcem.lr_phi, &self.lr_phi);
        set(&mut cfg.mcem.max_iters, &self.max_iters);
        set(&mut cfg.mcem.recompute_w_every, &self.recompute_w_every);
        set(&mut cfg.mcem.record_every, &self.record_every);
        set(&mut cfg.mcem.seed, &self.seed);
        set(&mut cfg.mcem.precision, &self.precision);
        if let Some(k) = self.gt_kernel {
            cfg.kernel_prior.mode = KernelMode::NonBlind;
            cfg.kernel_prior.ground_truth = Some(k);
        }
        cfg.mcem.freeze_w |= self.freeze_w;
        cfg.ablation.no_freq_likelihood |= self.no_freq_likelihood;
        cfg.ablation.plain_skip |= self.plain_skip;
        cfg.ablation.no_instance_norm |= self.no_instance_norm;
    }
}
