use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use regformer_cli::infer::{cmd_eval, cmd_infer, cmd_mask_dump, load_model};
use regformer_cli::synth::{cmd_synth_data, CleanSource};
use regformer_cli::train::{run_training, TrainOptions};
use regformer_cli::{load_config, CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "regformer",
    version,
    about = "Train and run the region-masked deraining transformer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// `key = value` run config; defaults apply to omitted keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output path (a directory for train, mask-dump and synth-data).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train from the config's train_manifest.
    Train {
        #[command(flatten)]
        common: Common,
        /// Resume from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many completed steps.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Derain one image.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Score a paired manifest and write a CSV report.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to the config's eval_manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Write every cascade's rain and unaffected masks as PNGs.
    MaskDump {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate rainy/clean pairs and a manifest.
    SynthData {
        #[command(flatten)]
        common: Common,
        /// Directory of clean images.
        #[arg(long, conflicts_with = "scenes", required_unless_present = "scenes")]
        clean_dir: Option<PathBuf>,
        /// Number of procedural clean scenes instead of a directory.
        #[arg(long)]
        scenes: Option<usize>,
        /// Side of the procedural scenes.
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
}

impl Common {
    fn config(&self) -> Result<Option<RunConfig>, CliError> {
        let Some(path) = &self.config else {
            return Ok(None);
        };
        let mut cfg = load_config(path)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(Some(cfg))
    }

    fn config_or_default(&self) -> Result<RunConfig, CliError> {
        Ok(match self.config()? {
            Some(c) => c,
            None => RunConfig {
                seed: self.seed.unwrap_or(0),
                out_dir: self
                    .out
                    .clone()
                    .unwrap_or_else(|| RunConfig::default().out_dir),
                ..RunConfig::default()
            },
        })
    }

    fn out(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train {
            common,
            resume,
            stop_after,
        } => {
            let cfg = common.config_or_default()?;
            let summary = run_training(&cfg, &TrainOptions { resume, stop_after })?;
            println!(
                "trained {} steps, last loss {}, checkpoint {}",
                summary.steps_done,
                summary.last_loss.map_or("-".into(), |l| l.to_string()),
                summary.checkpoint.display()
            );
        }
        Command::Infer {
            common,
            checkpoint,
            input,
        } => {
            let model = load_model(&checkpoint, common.config()?.as_ref())?;
            let out = common.out("derained.png");
            cmd_infer(&model, &input, &out)?;
            println!("wrote {}", out.display());
        }
        Command::Eval {
            common,
            checkpoint,
            manifest,
        } => {
            let cfg = common.config()?;
            let model = load_model(&checkpoint, cfg.as_ref())?;
            let manifest = manifest
                .or_else(|| cfg.as_ref().and_then(|c| c.eval_manifest.clone()))
                .ok_or_else(|| {
                    CliError::Invalid("no manifest: pass --manifest or set eval_manifest".into())
                })?;
            let out = common.out("eval.csv");
            let report = cmd_eval(&model, &manifest, &out)?;
            let (psnr, _) = report.mean_psnr();
            println!(
                "{} pairs, mean PSNR {} dB, mean SSIM {}; wrote {}",
                report.entries.len(),
                psnr.map_or("inf".into(), |p| format!("{p:.3}")),
                report.mean_ssim().map_or("-".into(), |s| format!("{s:.4}")),
                out.display()
            );
        }
        Command::MaskDump {
            common,
            checkpoint,
            input,
        } => {
            let model = load_model(&checkpoint, common.config()?.as_ref())?;
            let out = common.out("masks");
            let files = cmd_mask_dump(&model, &input, &out)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Command::SynthData {
            common,
            clean_dir,
            scenes,
            size,
        } => {
            let cfg = common.config_or_default()?;
            let source = match (clean_dir, scenes) {
                (Some(dir), None) => CleanSource::Dir(dir),
                (None, Some(count)) => CleanSource::Procedural { count, size },
                _ => {
                    return Err(CliError::Invalid(
                        "pass exactly one of --clean-dir or --scenes".into(),
                    ))
                }
            };
            let out = common.out("synth");
            let manifest = cmd_synth_data(&source, &cfg.rain, cfg.seed, &out)?;
            println!("wrote {}", manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
