//! Ablation presets over a manifest of HR images.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use svsr_core::imageops::bicubic_upsample;
use svsr_core::io::read_png;
use svsr_core::mcem::{run_mcem, RunStatus};
use svsr_core::metrics::evaluate;
use svsr_core::synth::{degrade, prepare_hr, SynthesisSpec};

use crate::config::{Overrides, RunConfig};
use crate::error::{CliError, Result};

/// Caps the worker pool of `ablate`.
pub const THREADS_ENV: &str = "SVSR_THREADS";

/// Atom counts of the `nd_sweep` preset.
pub const ND_SWEEP: [usize; 5] = [1, 3, 5, 7, 9];

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum Preset {
    /// Frequency-domain likelihood removed.
    Case1,
    /// Instance normalization removed.
    Case2,
    /// Frequency skips replaced by plain skips.
    Case3,
    /// N_D over 1, 3, 5, 7, 9.
    NdSweep,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Case1 => "case1",
            Preset::Case2 => "case2",
            Preset::Case3 => "case3",
            Preset::NdSweep => "nd_sweep",
        }
    }

    /// Named config variants derived from `base`.
    pub fn configs(self, base: &RunConfig) -> Vec<(String, RunConfig)> {
        let with = |f: &dyn Fn(&mut RunConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            Preset::Case1 => vec![("no_freq_likelihood".into(), with(&|c| c.ablation.no_freq_likelihood = true))],
            Preset::Case2 => vec![("no_instance_norm".into(), with(&|c| c.ablation.no_instance_norm = true))],
            Preset::Case3 => vec![("plain_skip".into(), with(&|c| c.ablation.plain_skip = true))],
            Preset::NdSweep => ND_SWEEP
                .iter()
                .map(|&n| (format!("nd_{n}"), with(&|c| c.degradation.n_atoms = n)))
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    /// Relative paths resolve against the manifest's directory.
    pub hr_path: PathBuf,
    #[serde(default)]
    pub spec: SynthesisSpec,
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config {
        path: path.into(),
        source: e.into(),
    })?;
    let mut entries: Vec<ManifestEntry> = serde_json::from_str(&text).map_err(|e| CliError::Config {
        path: path.into(),
        source: e.into(),
    })?;
    if entries.is_empty() {
        return Err(CliError::input(format!("{}: empty manifest", path.display())));
    }
    let dir = path.parent().unwrap_or(Path::new(""));
    for e in &mut entries {
        e.spec.validate()?;
        if e.hr_path.is_relative() {
            e.hr_path = dir.join(&e.hr_path);
        }
    }
    Ok(entries)
}

/// Inference seed for manifest entry `index`; every config variant of the
/// same image shares it.
pub fn child_seed(base: u64, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index as u64 + 1);
    rng.gen()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub preset: String,
    pub config: String,
    pub image: String,
    pub scale: usize,
    pub seed: u64,
    pub psnr_db: f64,
    pub ssim: f64,
    pub bicubic_psnr_db: f64,
    pub bicubic_ssim: f64,
    pub iterations: usize,
    pub status: String,
}

impl AblationRow {
    pub fn failed(&self) -> bool {
        self.status != "completed"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanRow {
    pub preset: String,
    pub config: String,
    pub runs: usize,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Args)]
pub struct AblateArgs {
    pub preset: Preset,
    /// JSON list of `{"hr_path": ..., "spec": {...}}`.
    #[arg(long, short = 'm')]
    pub manifest: PathBuf,
    /// Output directory for the CSV tables.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    #[command(flatten)]
    pub overrides: Overrides,
}

struct Job<'a> {
    entry: &'a ManifestEntry,
    config: &'a str,
    cfg: &'a RunConfig,
    seed: u64,
}

fn run_job(job: &Job) -> svsr_core::Result<(f64, f64, f64, f64, usize, RunStatus)> {
    let s = job.entry.spec.scale;
    let hr = prepare_hr(&read_png(&job.entry.hr_path)?, s)?;
    let lr = degrade(&hr, &job.entry.spec)?;
    let mut cfg = job.cfg.inference();
    cfg.degradation.scale = s;
    cfg.mcem.seed = job.seed;
    let report = run_mcem(&lr, &cfg, None, &mut |_| {})?;
    let m = evaluate(&hr, &report.image, s)?;
    let b = evaluate(&hr, &bicubic_upsample(&lr, s)?, s)?;
    Ok((m.psnr_db, m.ssim, b.psnr_db, b.ssim, report.iterations_run, report.status))
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::input(format!("{THREADS_ENV}={v:?} is not a thread count")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::input(format!("thread pool: {e}")))
}

/// Runs every (entry, config) pair; failures become NaN rows.
pub fn run_ablation(preset: Preset, entries: &[ManifestEntry], base: &RunConfig) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let configs = preset.configs(base);
    for (_, c) in &configs {
        c.validate()?;
    }
    let jobs: Vec<Job> = entries
        .iter()
        .enumerate()
        .flat_map(|(i, entry)| {
            configs.iter().map(move |(name, cfg)| Job {
                entry,
                config: name,
                cfg,
                seed: child_seed(base.mcem.seed, i),
            })
        })
        .collect();
    let rows = thread_pool()?.install(|| {
        jobs.par_iter()
            .map(|job| {
                let mut row = AblationRow {
                    preset: preset.name().into(),
                    config: job.config.into(),
                    image: job.entry.hr_path.display().to_string(),
                    scale: job.entry.spec.scale,
                    seed: job.seed,
                    psnr_db: f64::NAN,
                    ssim: f64::NAN,
                    bicubic_psnr_db: f64::NAN,
                    bicubic_ssim: f64::NAN,
                    iterations: 0,
                    status: String::new(),
                };
                match run_job(job) {
                    Ok((p, s, bp, bs, its, RunStatus::Completed)) => {
                        row.psnr_db = p;
                        row.ssim = s;
                        row.bicubic_psnr_db = bp;
                        row.bicubic_ssim = bs;
                        row.iterations = its;
                        row.status = "completed".into();
                    }
                    Ok((_, _, bp, bs, its, RunStatus::Aborted { reason, .. })) => {
                        row.bicubic_psnr_db = bp;
                        row.bicubic_ssim = bs;
                        row.iterations = its;
                        row.status = format!("aborted: {reason}");
                    }
                    Err(e) => row.status = format!("error: {e}"),
                }
                row
            })
            .collect()
    });
    Ok(rows)
}

/// Per-config means over completed runs (NaN when none completed).
pub fn means(rows: &[AblationRow]) -> Vec<MeanRow> {
    let mut out: Vec<MeanRow> = Vec::new();
    for r in rows {
        if !out.iter().any(|m| m.config == r.config) {
            let ok: Vec<_> = rows.iter().filter(|x| x.config == r.config && !x.failed()).collect();
            let n = ok.len();
            let mean = |f: &dyn Fn(&AblationRow) -> f64| {
                if n == 0 {
                    f64::NAN
                } else {
                    ok.iter().map(|x| f(x)).sum::<f64>() / n as f64
                }
            };
            out.push(MeanRow {
                preset: r.preset.clone(),
                config: r.config.clone(),
                runs: n,
                psnr_db: mean(&|x| x.psnr_db),
                ssim: mean(&|x| x.ssim),
            });
        }
    }
    out
}

fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

/// Paths of the per-image and mean tables for `preset` under `dir`.
pub fn table_paths(dir: &Path, preset: Preset) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("ablation_{}.csv", preset.name())),
        dir.join(format!("ablation_{}_mean.csv", preset.name())),
    )
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<Vec<AblationRow>> {
    let base = args.overrides.resolve()?;
    let entries = load_manifest(&args.manifest)?;
    let rows = run_ablation(args.preset, &entries, &base)?;
    let table = to_csv(&rows);
    let mean_table = to_csv(&means(&rows));

    fs::create_dir_all(&args.out).map_err(|e| CliError::output(&args.out, e))?;
    let (per_image, mean) = table_paths(&args.out, args.preset);
    fs::write(&per_image, &table).map_err(|e| CliError::output(&per_image, e))?;
    fs::write(&mean, &mean_table).map_err(|e| CliError::output(&mean, e))?;
    print!("{table}");
    eprint!("{mean_table}");

    let failed = rows.iter().filter(|r| r.failed()).count();
    if failed == rows.len() {
        return Err(CliError::AllFailed);
    }
    if failed > 0 {
        eprintln!("warning: {failed} of {} runs failed", rows.len());
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_sizes_and_deltas() {
        let base = RunConfig::default();
        assert_eq!(Preset::NdSweep.configs(&base).len(), 5);
        for p in [Preset::Case1, Preset::Case2, Preset::Case3] {
            assert_eq!(p.configs(&base).len(), 1);
        }
        let (_, c1) = &Preset::Case1.configs(&base)[0];
        let mut expect = base.clone();
        expect.ablation.no_freq_likelihood = true;
        assert_eq!(c1, &expect);
        assert!(!c1.inference().likelihood.frequency_term);
        let nd: Vec<_> = Preset::NdSweep
            .configs(&base)
            .iter()
            .map(|(_, c)| c.degradation.n_atoms)
            .collect();
        assert_eq!(nd, ND_SWEEP);
    }

    #[test]
    fn child_seeds_are_stable_and_distinct() {
        assert_eq!(child_seed(3, 0), child_seed(3, 0));
        assert_ne!(child_seed(3, 0), child_seed(3, 1));
        assert_ne!(child_seed(3, 0), child_seed(4, 0));
    }

    #[test]
    fn means_skip_failed_rows() {
        let row = |config: &str, psnr: f64, status: &str| AblationRow {
            preset: "nd_sweep".into(),
            config: config.into(),
            image: "a.png".into(),
            scale: 2,
            seed: 0,
            psnr_db: psnr,
            ssim: 0.5,
            bicubic_psnr_db: 20.0,
            bicubic_ssim: 0.4,
            iterations: 1,
            status: status.into(),
        };
        let rows = [
            row("nd_1", 30.0, "completed"),
            row("nd_1", f64::NAN, "error: x"),
            row("nd_3", 28.0, "completed"),
            row("nd_3", 26.0, "completed"),
        ];
        let m = means(&rows);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].runs, m[0].psnr_db), (1, 30.0));
        assert_eq!((m[1].runs, m[1].psnr_db), (2, 27.0));
    }
}
