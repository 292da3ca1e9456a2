use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ppsr::denoisers::DenoiserSpec;
use ppsr::harness::{
    cmd_degrade, cmd_denoise, cmd_psnr, cmd_superres, cmd_synth_translations, ExperimentConfig,
    RawConfig, SyntheticTranslationSpec,
};
use ppsr::metrics::PsnrOptions;
use ppsr::Error;

#[derive(Parser)]
#[command(
    name = "ppsr",
    about = "Single-image and video super-resolution with denoiser-driven ADMM (plug-and-play or regularization-by-denoising)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines with dotted prefixes.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set solver.beta=0.2048`. Repeatable;
    /// flags win over file values.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RawConfig, Error> {
        let mut raw = match &self.config {
            Some(path) => RawConfig::from_file(path)?,
            None => RawConfig::default(),
        };
        for s in &self.sets {
            let (k, v) = s
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {s}")))?;
            raw.set(k, v);
        }
        Ok(raw)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the degradation pipeline: blur, decimate, add noise.
    Degrade(ConfigArgs),
    /// Generate a synthetic sequence of random global translations of a base frame.
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Run the full super-resolution solve and write frames, trace and report.
    Superres(ConfigArgs),
    /// Apply the configured denoiser once.
    Denoise {
        #[command(flatten)]
        config: ConfigArgs,
        /// Input frame file or directory.
        #[arg(long)]
        input: PathBuf,
        /// Noise level passed to the denoiser (intensity units).
        #[arg(long)]
        sigma: f64,
        /// Output directory.
        #[arg(long, default_value = "out")]
        output: PathBuf,
    },
    /// PSNR between two stored volumes.
    Psnr {
        /// First volume (file or directory).
        a: PathBuf,
        /// Second volume (file or directory).
        b: PathBuf,
        /// Pixels excluded on each spatial side.
        #[arg(long, default_value_t = 0)]
        border_crop: usize,
        /// Also print per-frame values.
        #[arg(long)]
        per_frame: bool,
    },
}

fn denoiser_only(raw: &RawConfig) -> Result<DenoiserSpec, Error> {
    // reuse the full config path with a placeholder input; denoise has its
    // own --input flag
    let mut raw = raw.clone();
    raw.set("input.path", ".");
    Ok(ExperimentConfig::from_raw(raw)?.denoiser)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Degrade(args) => {
            let cfg = ExperimentConfig::from_raw(args.resolve()?)?;
            let lr = cmd_degrade(&cfg)?;
            println!(
                "wrote {}x{}x{} LR volume to {}",
                lr.height(),
                lr.width(),
                lr.frames(),
                cfg.output_dir.display()
            );
        }
        Command::Synth { config } => {
            let raw = config.resolve()?;
            let need = |k: &str| -> Result<String, Error> {
                raw.get(k)
                    .map(str::to_string)
                    .ok_or_else(|| Error::Config(format!("missing required key {k}")))
            };
            let parse_u = |k: &str, d: u64| -> Result<u64, Error> {
                raw.get(k)
                    .map(|v| {
                        v.parse::<u64>()
                            .map_err(|_| Error::Config(format!("bad value for {k}: {v}")))
                    })
                    .unwrap_or(Ok(d))
            };
            let spec = SyntheticTranslationSpec {
                base: PathBuf::from(need("synth.base")?),
                frame_count: parse_u("synth.frames", 30)? as usize,
                max_shift: parse_u("synth.max_shift", 5)? as usize,
                seed: parse_u("seed", 0)?,
            };
            let out = PathBuf::from(raw.get("output.dir").unwrap_or("out"));
            let (vol, offsets) = cmd_synth_translations(&spec, &out)?;
            println!(
                "wrote {} frames of {}x{} to {} (offsets recorded in manifest)",
                vol.frames(),
                vol.height(),
                vol.width(),
                out.display()
            );
            for (t, (dx, dy)) in offsets.iter().enumerate() {
                println!("frame {t}: dx={dx} dy={dy}");
            }
        }
        Command::Superres(args) => {
            let cfg = ExperimentConfig::from_raw(args.resolve()?)?;
            let out = cmd_superres(&cfg)?;
            println!("wrote SR output to {}", cfg.output_dir.display());
            if let (Some(sr), Some(bi)) = (&out.sr_psnr, &out.bicubic_psnr) {
                println!("PSNR sr vs truth:      {:.4} dB", sr.overall);
                println!("PSNR bicubic vs truth: {:.4} dB", bi.overall);
            }
        }
        Command::Denoise {
            config,
            input,
            sigma,
            output,
        } => {
            let spec = denoiser_only(&config.resolve()?)?;
            cmd_denoise(&input, sigma, &spec, &output)?;
            println!("wrote denoised volume to {}", output.display());
        }
        Command::Psnr {
            a,
            b,
            border_crop,
            per_frame,
        } => {
            let report = cmd_psnr(
                &a,
                &b,
                &PsnrOptions {
                    border_crop,
                    per_frame,
                },
            )?;
            println!("psnr = {:.6}", report.overall);
            if let (Some(pf), Some(mean)) = (report.per_frame, report.per_frame_mean) {
                for (t, p) in pf.iter().enumerate() {
                    println!("psnr.frame.{t} = {p:.6}");
                }
                println!("psnr.frame.mean = {mean:.6}");
            }
        }
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Io(_) | Error::Malformed { .. } => 4,
        Error::CgDiverged { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
