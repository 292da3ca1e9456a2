//! Experiment runner: config parsing, degradation simulation, synthetic
//! pure-translation sequence generation, end-to-end super-resolution runs,
//! and report/trace emission.
//!
//! Configs are flat plain-text `key = value` lines with dotted section
//! prefixes (`solver.beta = 0.2048`); `#` starts a comment. CLI `--set
//! key=value` flags override file values. Every command echoes its effective
//! config into `manifest.txt` in the output directory, so re-running from the
//! manifest reproduces the outputs bitwise on the float-dump path.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::denoisers::{denoise, DenoiserSpec};
use crate::error::{Error, Result};
use crate::io::{read_dump, read_pgm, write_dump, write_pgm};
use crate::metrics::{bicubic_resize, psnr_report, PsnrOptions, PsnrReport, ResizeDirection};
use crate::operators::{add_noise, forward, mirror, BlurKernel, DegradationModel};
use crate::solver::{solve, ConvergenceTrace, Scheme, SolverConfig};
use crate::volume::ImageVolume;

/// Flat key = value configuration with stable (sorted) iteration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    map: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            map.insert(key.trim().to_string(), value.trim().to_string());
        }
        Ok(Self { map })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.map.insert(key.trim().to_string(), value.trim().to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value for {key}: {raw}"))),
        }
    }

    fn required<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.parse_as(key)?
            .ok_or_else(|| Error::Config(format!("missing required key {key}")))
    }

    fn or_default<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T> {
        Ok(self.parse_as(key)?.unwrap_or(default))
    }
}

/// Fully resolved experiment configuration, plus the raw config it came from
/// (echoed into the manifest for provenance).
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub input_path: PathBuf,
    pub truth_path: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub model: DegradationModel,
    pub solver: SolverConfig,
    pub denoiser: DenoiserSpec,
    pub report: PsnrOptions,
    pub raw: RawConfig,
}

fn kernel_from_raw(raw: &RawConfig) -> Result<BlurKernel> {
    match raw.or_default("degrade.kernel", "identity".to_string())?.as_str() {
        "identity" => Ok(BlurKernel::identity()),
        "gaussian" => BlurKernel::gaussian(
            raw.or_default("degrade.kernel.stddev", 1.0)?,
            raw.or_default("degrade.kernel.size", 3usize)?,
        ),
        "box" => BlurKernel::boxcar(raw.or_default("degrade.kernel.size", 3usize)?),
        "file" => {
            let path: String = raw.required("degrade.kernel.path")?;
            BlurKernel::from_file(Path::new(&path))
        }
        other => Err(Error::Config(format!("unknown degrade.kernel kind {other}"))),
    }
}

fn denoiser_from_raw(raw: &RawConfig) -> Result<DenoiserSpec> {
    let kind: String = raw.or_default("denoiser.kind", "nlm_image".to_string())?;
    let patch_radius: usize = raw.or_default("denoiser.patch_radius", 1)?;
    let default_bw = DenoiserSpec::default_nlm_bandwidth_mult(patch_radius);
    let spec = match kind.as_str() {
        "gaussian_smooth" => DenoiserSpec::GaussianSmooth {
            kappa: raw.or_default("denoiser.kappa", 0.5)?,
        },
        "tv" => DenoiserSpec::Tv {
            step: raw.or_default("denoiser.step", 0.2)?,
            iters: raw.or_default("denoiser.iters", 20)?,
            lambda_mult: raw.or_default("denoiser.lambda_mult", 0.02)?,
        },
        "nlm_image" => DenoiserSpec::NlmImage {
            patch_radius,
            search_radius: raw.or_default("denoiser.search_radius", 3)?,
            bandwidth_mult: raw.or_default("denoiser.bandwidth_mult", default_bw)?,
        },
        "nlm_video" => DenoiserSpec::NlmVideo {
            patch_radius,
            search_radius: raw.or_default("denoiser.search_radius", 3)?,
            temporal_radius: raw.or_default("denoiser.temporal_radius", 1)?,
            bandwidth_mult: raw.or_default("denoiser.bandwidth_mult", default_bw)?,
        },
        other => return Err(Error::Config(format!("unknown denoiser.kind {other}"))),
    };
    spec.validate()?;
    Ok(spec)
}

fn solver_from_raw(raw: &RawConfig) -> Result<SolverConfig> {
    let d = SolverConfig::default();
    let scheme = match raw.or_default("solver.scheme", "red".to_string())?.as_str() {
        "ppp" => Scheme::Ppp,
        "red" => Scheme::Red,
        other => return Err(Error::Config(format!("unknown solver.scheme {other}"))),
    };
    let cfg = SolverConfig {
        scheme,
        rho0: raw.or_default("solver.rho0", d.rho0)?,
        beta: raw.or_default("solver.beta", d.beta)?,
        alpha: raw.or_default("solver.alpha", d.alpha)?,
        iter: raw.or_default("solver.iter", d.iter)?,
        iter_inner: raw.or_default("solver.iter_inner", d.iter_inner)?,
        cg_tol: raw.or_default("solver.cg_tol", d.cg_tol)?,
        cg_max_iter: raw.or_default("solver.cg_max_iter", d.cg_max_iter)?,
        rho_decrease_window: raw.or_default("solver.rho_decrease_window", d.rho_decrease_window)?,
        rho_decrease_factor: raw.or_default("solver.rho_decrease_factor", d.rho_decrease_factor)?,
        sigma_min: raw.or_default("solver.sigma_min", d.sigma_min)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self> {
        let input_path = PathBuf::from(raw.required::<String>("input.path")?);
        if !input_path.exists() {
            return Err(Error::Config(format!(
                "input.path does not exist: {}",
                input_path.display()
            )));
        }
        let truth_path = raw.get("truth.path").map(PathBuf::from);
        if let Some(p) = &truth_path {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "truth.path does not exist: {}",
                    p.display()
                )));
            }
        }
        let output_dir = PathBuf::from(raw.or_default("output.dir", "out".to_string())?);
        let model = DegradationModel::new(
            kernel_from_raw(&raw)?,
            raw.or_default("degrade.scale", 1usize)?,
            raw.or_default("degrade.sigma", 0.0)?,
        )?;
        Ok(Self {
            input_path,
            truth_path,
            output_dir,
            seed: raw.or_default("seed", 0u64)?,
            model,
            solver: solver_from_raw(&raw)?,
            denoiser: denoiser_from_raw(&raw)?,
            report: PsnrOptions {
                border_crop: raw.or_default("report.border_crop", 0usize)?,
                per_frame: raw.or_default("report.per_frame", false)?,
            },
            raw,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTranslationSpec {
    pub base: PathBuf,
    pub frame_count: usize,
    pub max_shift: usize,
    pub seed: u64,
}

impl SyntheticTranslationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.frame_count == 0 {
            return Err(Error::Config("synth.frames must be >= 1".into()));
        }
        if !self.base.exists() {
            return Err(Error::Config(format!(
                "synth.base does not exist: {}",
                self.base.display()
            )));
        }
        Ok(())
    }
}

/// Loads a volume from a single file (`.pgm` or `.psrv`) or a directory of
/// such files taken in sorted name order as consecutive frames.
pub fn load_volume(path: &Path) -> Result<ImageVolume> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("pgm") | Some("psrv")
                )
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Config(format!(
                "no .pgm or .psrv frames in {}",
                path.display()
            )));
        }
        let parts: Vec<ImageVolume> = files
            .iter()
            .map(|p| load_volume(p))
            .collect::<Result<_>>()?;
        let (h, w, _) = parts[0].shape();
        let frames: usize = parts.iter().map(|p| p.frames()).sum();
        let mut data = Vec::with_capacity(h * w * frames);
        for p in &parts {
            if (p.height(), p.width()) != (h, w) {
                return Err(Error::DimensionMismatch(format!(
                    "frame size mismatch in {}",
                    path.display()
                )));
            }
            data.extend_from_slice(p.data());
        }
        ImageVolume::new(h, w, frames, data)
    } else {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pgm") => read_pgm(path),
            Some("psrv") => read_dump(path),
            _ => Err(Error::Config(format!(
                "unsupported input format: {}",
                path.display()
            ))),
        }
    }
}

/// Writes `v` into `dir` as `<stem>.psrv` plus one `<stem>_NNN.pgm` per frame.
pub fn write_volume(v: &ImageVolume, dir: &Path, stem: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let dump = dir.join(format!("{stem}.psrv"));
    write_dump(v, &dump)?;
    for t in 0..v.frames() {
        write_pgm(v, t, &dir.join(format!("{stem}_{t:03}.pgm")))?;
    }
    Ok(dump)
}

fn write_manifest(dir: &Path, raw: &RawConfig, extra: &[(String, String)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut text = raw.to_text();
    for (k, v) in extra {
        let _ = writeln!(text, "{k} = {v}");
    }
    fs::write(dir.join("manifest.txt"), text)?;
    Ok(())
}

/// Simulates the degradation pipeline: y = decimate(blur(x)) + noise.
/// Writes the LR frames and a manifest; deterministic per seed.
pub fn cmd_degrade(cfg: &ExperimentConfig) -> Result<ImageVolume> {
    let hr = load_volume(&cfg.input_path)?;
    let lr = forward(&hr, &cfg.model)?;
    let noisy = add_noise(&lr, cfg.model.noise_sigma, cfg.seed)?;
    write_volume(&noisy, &cfg.output_dir, "lr")?;
    write_manifest(&cfg.output_dir, &cfg.raw, &[])?;
    Ok(noisy)
}

/// Generates a sequence whose frames are random integer global translations
/// of the base frame (frame 0 unshifted; mirror fill at exposed borders).
/// The drawn offsets land in the manifest.
pub fn cmd_synth_translations(
    spec: &SyntheticTranslationSpec,
    output_dir: &Path,
) -> Result<(ImageVolume, Vec<(i64, i64)>)> {
    spec.validate()?;
    let base = load_volume(&spec.base)?;
    if base.frames() != 1 {
        return Err(Error::Config("synth.base must be a single frame".into()));
    }
    let (h, w, _) = base.shape();
    let mut rng = ChaCha12Rng::seed_from_u64(spec.seed);
    let m = spec.max_shift as i64;
    let mut offsets = vec![(0i64, 0i64)];
    for _ in 1..spec.frame_count {
        let dx = if m == 0 { 0 } else { rng.gen_range(-m..=m) };
        let dy = if m == 0 { 0 } else { rng.gen_range(-m..=m) };
        offsets.push((dx, dy));
    }
    let vol = ImageVolume::from_fn(h, w, spec.frame_count, |i, j, t| {
        let (dx, dy) = offsets[t];
        base.get(
            mirror(i as isize - dy as isize, h),
            mirror(j as isize - dx as isize, w),
            0,
        )
    })?;
    write_volume(&vol, output_dir, "synth")?;
    let mut raw = RawConfig::default();
    raw.set("synth.base", &spec.base.display().to_string());
    raw.set("synth.frames", &spec.frame_count.to_string());
    raw.set("synth.max_shift", &spec.max_shift.to_string());
    raw.set("seed", &spec.seed.to_string());
    let extra: Vec<(String, String)> = offsets
        .iter()
        .enumerate()
        .map(|(t, (dx, dy))| (format!("offset.{t}"), format!("{dx} {dy}")))
        .collect();
    write_manifest(output_dir, &raw, &extra)?;
    Ok((vol, offsets))
}

#[derive(Debug, Clone)]
pub struct SuperresOutcome {
    pub sr: ImageVolume,
    pub trace: ConvergenceTrace,
    pub sr_psnr: Option<PsnrReport>,
    pub bicubic_psnr: Option<PsnrReport>,
}

fn render_report(cfg: &ExperimentConfig, out: &SuperresOutcome) -> String {
    let mut text = String::new();
    let _ = writeln!(text, "super-resolution run: {}", cfg.input_path.display());
    let _ = writeln!(
        text,
        "scheme: {:?}, iterations: {}, denoiser calls: {}",
        cfg.solver.scheme, cfg.solver.iter, out.trace.denoiser_calls
    );
    let fmt_db = |r: &PsnrReport| -> String {
        let mut s = format!("{:.4} dB", r.overall);
        if let (Some(pf), Some(mean)) = (&r.per_frame, r.per_frame_mean) {
            let vals: Vec<String> = pf.iter().map(|p| format!("{p:.4}")).collect();
            let _ = write!(s, " (per frame: [{}], mean {mean:.4})", vals.join(", "));
        }
        s
    };
    match (&out.sr_psnr, &out.bicubic_psnr) {
        (Some(sr), Some(bi)) => {
            let _ = writeln!(text, "PSNR sr vs truth:      {}", fmt_db(sr));
            let _ = writeln!(text, "PSNR bicubic vs truth: {}", fmt_db(bi));
        }
        _ => {
            let _ = writeln!(text, "no ground truth supplied; PSNR omitted");
        }
    }
    let _ = writeln!(text);
    let _ = writeln!(text, "[report]");
    let _ = writeln!(text, "report.border_crop = {}", cfg.report.border_crop);
    let _ = writeln!(text, "report.per_frame = {}", cfg.report.per_frame);
    if let Some(sr) = &out.sr_psnr {
        let _ = writeln!(text, "psnr.sr = {:.6}", sr.overall);
    }
    if let Some(bi) = &out.bicubic_psnr {
        let _ = writeln!(text, "psnr.bicubic = {:.6}", bi.overall);
    }
    let _ = writeln!(text, "denoiser.calls = {}", out.trace.denoiser_calls);
    text
}

/// End-to-end run: solve, then write SR frames, trace CSV and a report that
/// always pairs the result with the bicubic baseline under the same options.
pub fn cmd_superres(cfg: &ExperimentConfig) -> Result<SuperresOutcome> {
    let y = load_volume(&cfg.input_path)?;
    let truth = cfg.truth_path.as_deref().map(load_volume).transpose()?;
    let (sr, trace) = solve(&y, &cfg.model, &cfg.solver, &cfg.denoiser, truth.as_ref())?;
    let (sr_psnr, bicubic_psnr) = match &truth {
        Some(t) => {
            let baseline = bicubic_resize(&y, cfg.model.scale, ResizeDirection::Up)?;
            (
                Some(psnr_report(&sr, t, &cfg.report)?),
                Some(psnr_report(&baseline, t, &cfg.report)?),
            )
        }
        None => (None, None),
    };
    let outcome = SuperresOutcome {
        sr,
        trace,
        sr_psnr,
        bicubic_psnr,
    };
    write_volume(&outcome.sr, &cfg.output_dir, "sr")?;
    fs::write(cfg.output_dir.join("trace.csv"), outcome.trace.to_csv())?;
    fs::write(
        cfg.output_dir.join("report.txt"),
        render_report(cfg, &outcome),
    )?;
    write_manifest(&cfg.output_dir, &cfg.raw, &[])?;
    Ok(outcome)
}

/// Exposes the black-box denoiser directly: one application at level `sigma`.
pub fn cmd_denoise(
    input: &Path,
    sigma: f64,
    spec: &DenoiserSpec,
    output_dir: &Path,
) -> Result<ImageVolume> {
    let v = load_volume(input)?;
    let out = denoise(&v, sigma, spec)?;
    write_volume(&out, output_dir, "denoised")?;
    Ok(out)
}

/// PSNR between two stored volumes.
pub fn cmd_psnr(a: &Path, b: &Path, opt: &PsnrOptions) -> Result<PsnrReport> {
    let va = load_volume(a)?;
    let vb = load_volume(b)?;
    psnr_report(&va, &vb, opt)
}
