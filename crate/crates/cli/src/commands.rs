//! `sr`, `degrade` and `eval`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Serialize, Serializer};
use svsr_core::degradation::{synthesize_atom_kernel, AtomKernelParams};
use svsr_core::imageops::bicubic_upsample;
use svsr_core::io::{read_png, write_heatmap, write_png, write_raw};
use svsr_core::mcem::{run_mcem, InferenceReport, IterationRecord, Progress, RunStatus};
use svsr_core::metrics::{evaluate, MetricResult};
use svsr_core::synth::{degrade, prepare_hr, KernelChoice, NamedKernel};
use svsr_tensor::Tensor;

use crate::config::{Overrides, RunConfig, RESOLVED_CONFIG};
use crate::error::{CliError, Result};

/// PSNR of identical images is written as the string `"inf"`.
fn psnr_json<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    #[serde(serialize_with = "psnr_json")]
    pub psnr_db: f64,
    pub ssim: f64,
    pub border_crop: usize,
}

impl From<MetricResult> for Metrics {
    fn from(m: MetricResult) -> Self {
        Metrics {
            psnr_db: m.psnr_db,
            ssim: m.ssim,
            border_crop: m.border_crop,
        }
    }
}

/// Wall-clock fields, kept apart so reports compare byte-for-byte without
/// them.
#[derive(Clone, Debug, Serialize)]
pub struct Timing {
    pub elapsed_secs: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SrReport {
    pub status: RunStatus,
    pub iterations_run: usize,
    pub scale: usize,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub kernels: Vec<AtomKernelParams>,
    pub bicubic: Option<Metrics>,
    pub result: Option<Metrics>,
    pub records: Vec<IterationRecord>,
    pub timing: Timing,
}

#[derive(Clone, Debug, Args)]
pub struct SrArgs {
    /// Observed LR PNG (may instead come from the config's `io.input`).
    pub input: Option<PathBuf>,
    /// Output directory for the run artifacts.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    /// HR reference PNG; adds PSNR/SSIM to progress and the report.
    #[arg(long)]
    pub gt_hr: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: Overrides,
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::output(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::output(path, e))
}

fn write_err(path: &Path) -> impl FnOnce(svsr_core::CoreError) -> CliError + '_ {
    move |e| CliError::output(path, e)
}

/// Resolves the configuration for `sr` from file, flags and positional
/// paths.
pub fn resolve_sr(args: &SrArgs) -> Result<RunConfig> {
    let mut cfg = args.overrides.resolve()?;
    if let Some(p) = &args.input {
        cfg.io.input = Some(p.clone());
    }
    if let Some(p) = &args.gt_hr {
        cfg.io.ground_truth = Some(p.clone());
    }
    cfg.validate()?;
    if cfg.io.input.is_none() {
        return Err(CliError::input("no input image given"));
    }
    Ok(cfg)
}

/// Runs inference and writes every artifact into `out`. A numerical abort
/// still writes the partial results before returning the error.
pub fn run_sr(cfg: &RunConfig, out: &Path) -> Result<SrReport> {
    let input = cfg.io.input.as_ref().ok_or_else(|| CliError::input("no input image given"))?;
    let lr = read_png(input)?;
    let gt = cfg.io.ground_truth.as_ref().map(read_png).transpose()?;
    let inference = cfg.inference();
    let s = inference.degradation.scale;

    create_dir(out)?;
    let mut progress = |p: &Progress| match p.psnr {
        Some(db) => eprintln!("iter {:>6}  energy {:.6e}  psnr {:.3} dB", p.iteration, p.energy, db),
        None => eprintln!("iter {:>6}  energy {:.6e}", p.iteration, p.energy),
    };
    let report = run_mcem(&lr, &inference, gt.as_ref(), &mut progress)?;

    let (bicubic, result) = match &gt {
        Some(gt) => {
            let up = bicubic_upsample(&lr, s)?;
            (Some(evaluate(gt, &up, s)?.into()), Some(evaluate(gt, &report.image, s)?.into()))
        }
        None => (None, None),
    };
    let summary = SrReport {
        status: report.status.clone(),
        iterations_run: report.iterations_run,
        scale: s,
        input_shape: lr.shape().to_vec(),
        output_shape: report.image.shape().to_vec(),
        kernels: report.kernels.clone(),
        bicubic,
        result,
        records: report.records.clone(),
        timing: Timing {
            elapsed_secs: report.elapsed_secs,
        },
    };
    write_artifacts(cfg, out, &report, &summary)?;
    match &report.status {
        RunStatus::Completed => Ok(summary),
        RunStatus::Aborted { iteration, reason } => Err(CliError::Aborted {
            iteration: *iteration,
            reason: reason.clone(),
        }),
    }
}

fn write_artifacts(cfg: &RunConfig, out: &Path, report: &InferenceReport, summary: &SrReport) -> Result<()> {
    let p = out.join("result.png");
    write_png(&p, &report.image).map_err(write_err(&p))?;
    let p = out.join("report.json");
    write_text(&p, &serde_json::to_string_pretty(summary).expect("report serializes"))?;
    let p = out.join(RESOLVED_CONFIG);
    write_text(&p, &cfg.to_json())?;

    let (kdir, mdir, hdir) = (out.join("kernels"), out.join("maps"), out.join("heatmaps"));
    for d in [&kdir, &mdir, &hdir] {
        create_dir(d)?;
    }
    let ksize = cfg.degradation.kernel_size;
    for (i, atom) in report.kernels.iter().enumerate() {
        let k = synthesize_atom_kernel(atom, ksize)?;
        let p = kdir.join(format!("atom_{i}.bin"));
        write_raw(&p, &format!("atom_{i}"), &k).map_err(write_err(&p))?;
    }
    let mut named: Vec<(String, &Tensor<f64>)> = report
        .maps
        .maps
        .iter()
        .enumerate()
        .map(|(i, m)| (format!("w_{i}"), m))
        .collect();
    named.push(("texture".into(), &report.maps.texture));
    for (name, m) in named {
        let p = mdir.join(format!("{name}.bin"));
        write_raw(&p, &name, m).map_err(write_err(&p))?;
        let p = hdir.join(format!("{name}.png"));
        write_heatmap(&p, m).map_err(write_err(&p))?;
    }
    Ok(())
}

/// Kernel spec on the command line: a bank id `1..6`, `delta`, or
/// `THETA,SIGMA1,SIGMA2`.
pub fn parse_kernel_choice(s: &str) -> std::result::Result<KernelChoice, String> {
    if s == "delta" {
        return Ok(KernelChoice::Named(NamedKernel::Delta));
    }
    if let Ok(id) = s.parse::<usize>() {
        return Ok(KernelChoice::Bank(id));
    }
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [theta, s1, s2] => Ok(KernelChoice::Explicit(AtomKernelParams::new(theta, s1, s2))),
        _ => Err("expected 1..6, delta, or THETA,SIGMA1,SIGMA2".into()),
    }
}

#[derive(Clone, Debug, Args)]
pub struct DegradeArgs {
    /// HR PNG.
    pub input: PathBuf,
    /// LR PNG to write.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    /// Config file; only its `[synthesis]` section is used.
    #[arg(long, short = 'c')]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_kernel_choice, allow_hyphen_values = true)]
    pub kernel: Option<KernelChoice>,
    #[arg(long)]
    pub scale: Option<usize>,
    /// Noise standard deviation as a fraction of the [0, 1] range.
    #[arg(long)]
    pub noise_std: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the (center-cropped) HR image actually degraded.
    #[arg(long)]
    pub save_hr: Option<PathBuf>,
}

pub fn run_degrade(args: &DegradeArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(p) => RunConfig::load(p)?.synthesis,
        None => Default::default(),
    };
    if let Some(k) = args.kernel {
        spec.kernel = k;
    }
    if let Some(s) = args.scale {
        spec.scale = s;
    }
    if let Some(n) = args.noise_std {
        spec.noise_std = n;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.validate()?;
    let hr = read_png(&args.input)?;
    let cropped = prepare_hr(&hr, spec.scale)?;
    if cropped.shape() != hr.shape() {
        eprintln!(
            "note: HR center-cropped from {:?} to {:?}",
            &hr.shape()[1..],
            &cropped.shape()[1..]
        );
    }
    let lr = degrade(&cropped, &spec)?;
    write_png(&args.out, &lr).map_err(write_err(&args.out))?;
    if let Some(p) = &args.save_hr {
        write_png(p, &cropped).map_err(write_err(p))?;
    }
    Ok(())
}

#[derive(Clone, Debug, Args)]
pub struct EvalArgs {
    /// Reference (HR) PNG.
    pub reference: PathBuf,
    /// PNG to score.
    pub test: PathBuf,
    /// Scale factor; sets the default border crop.
    #[arg(long, default_value_t = 2)]
    pub scale: usize,
    /// Pixels excluded per side (defaults to the scale).
    #[arg(long)]
    pub crop: Option<usize>,
    /// Also write the metrics JSON here.
    #[arg(long, short = 'o')]
    pub out: Option<PathBuf>,
}

pub fn run_eval(args: &EvalArgs) -> Result<Metrics> {
    let a = read_png(&args.reference)?;
    let b = read_png(&args.test)?;
    if a.shape() != b.shape() {
        return Err(CliError::input(format!(
            "shape mismatch: {:?} vs {:?}",
            &a.shape()[1..],
            &b.shape()[1..]
        )));
    }
    let m: Metrics = evaluate(&a, &b, args.crop.unwrap_or(args.scale))?.into();
    let json = serde_json::to_string(&m).expect("metrics serialize");
    println!("{json}");
    if let Some(p) = &args.out {
        write_text(p, &json)?;
    }
    Ok(m)
}
