//! The training loop.
//!
//! Step `s` (zero-based) draws its samples from a ChaCha8 stream keyed by
//! `(seed, s + 1)`, so any step can be replayed without replaying the ones
//! before it. Stream 0 of the same seed is used by parameter init.
//! Together with the `f64` master weights stored in checkpoints this makes a
//! resumed run identical to an uninterrupted one.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regformer::data::{image_to_tensor, load_image, read_manifest, sample_patch_with, Image};
use regformer::model::{forward, init_params, l1_loss, Ctx};
use regformer::nn::{cosine_lr, AdamW, OptimState, ParamStore};
use regformer::Tensor;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::{io_err, CliError, Result};

pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "step,lr,loss";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(step: u64) -> String {
    format!("step_{step:06}.ckpt")
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Continue from this checkpoint instead of initializing.
    pub resume: Option<PathBuf>,
    /// Stop after this many completed steps (for interrupted runs).
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub steps_done: u64,
    pub last_loss: Option<f64>,
    pub log_path: PathBuf,
    pub checkpoint: PathBuf,
    pub params: ParamStore,
}

/// Clean/rainy pairs held in memory.
pub struct Dataset {
    pub pairs: Vec<(Image, Image)>,
}

impl Dataset {
    pub fn from_manifest(path: &Path) -> Result<Self> {
        let entries = read_manifest(path)?;
        if entries.is_empty() {
            return Err(CliError::Invalid(format!(
                "{}: manifest lists no pairs",
                path.display()
            )));
        }
        let missing: Vec<String> = entries
            .iter()
            .flat_map(|e| [&e.clean, &e.rainy])
            .filter(|p| !p.exists())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(CliError::MissingFiles(missing));
        }
        let pairs = entries
            .iter()
            .map(|e| Ok((load_image(&e.clean)?, load_image(&e.rainy)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pairs })
    }
}

pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step + 1);
    rng
}

/// `(rainy, clean)` patch tensors for one step.
pub fn step_batch(data: &Dataset, cfg: &RunConfig, step: u64) -> Result<Vec<(Tensor, Tensor)>> {
    let mut rng = step_rng(cfg.seed, step);
    (0..cfg.batch_size)
        .map(|_| {
            let (clean, rainy) = &data.pairs[rng.gen_range(0..data.pairs.len())];
            let (c, r, _) = sample_patch_with(clean, rainy, cfg.patch_size, &mut rng)?;
            Ok((image_to_tensor(&r), image_to_tensor(&c)))
        })
        .collect()
}

/// Mean L1 loss over `batch` and its parameter gradients.
pub fn loss_and_grads(
    params: &ParamStore,
    cfg: &RunConfig,
    batch: &[(Tensor, Tensor)],
) -> Result<(f64, ParamStore)> {
    let mut ctx = Ctx::new(params, true);
    let mut total = None;
    for (input, target) in batch {
        let x = ctx
            .g
            .constant(input.clone())
            .map_err(regformer::model::ModelError::from)?;
        let y = forward(&mut ctx, x, &cfg.model)?;
        let l = l1_loss(&mut ctx, y, target)?;
        total = Some(match total {
            None => l,
            Some(acc) => ctx
                .g
                .add(acc, l)
                .map_err(regformer::model::ModelError::from)?,
        });
    }
    let mut loss = total.ok_or_else(|| CliError::Invalid("empty batch".into()))?;
    if batch.len() > 1 {
        let k = ctx
            .g
            .constant(Tensor::scalar(1.0 / batch.len() as f64))
            .map_err(regformer::model::ModelError::from)?;
        loss = ctx
            .g
            .mul(loss, k)
            .map_err(regformer::model::ModelError::from)?;
    }
    let value = ctx.g.value(loss).item().expect("scalar loss");
    let grads = ctx.backward(loss)?;
    Ok((value, grads))
}

fn hyper(cfg: &RunConfig) -> AdamW {
    AdamW {
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        weight_decay: cfg.weight_decay,
        ..AdamW::default()
    }
}

/// Keeps the header and the rows for steps before `upto`.
fn truncate_log(text: &str, upto: u64) -> String {
    let mut out = format!("{LOG_HEADER}\n");
    for line in text.lines().skip(1) {
        let step = line.split(',').next().and_then(|s| s.parse::<u64>().ok());
        if matches!(step, Some(s) if s < upto) {
            out.push_str(line);
            out.push('\n');
        }
    }
    out
}

pub fn run_training(cfg: &RunConfig, opts: &TrainOptions) -> Result<TrainSummary> {
    cfg.validate()?;
    let manifest = cfg
        .train_manifest
        .as_deref()
        .ok_or_else(|| CliError::Invalid("train_manifest is not set".into()))?;
    let data = Dataset::from_manifest(manifest)?;
    fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let log_path = cfg.out_dir.join(LOG_FILE);

    let (mut params, mut state, start, mut log) = match &opts.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let diff = cfg.model_differences(&ck.config);
            if !diff.is_empty() {
                return Err(CliError::ConfigMismatch(diff));
            }
            let state = ck.optim.ok_or_else(|| {
                CliError::Invalid(format!(
                    "{}: no optimizer state to resume from",
                    path.display()
                ))
            })?;
            let old = fs::read_to_string(&log_path).unwrap_or_default();
            (ck.params, state, ck.step, truncate_log(&old, ck.step))
        }
        None => {
            let params = init_params(&cfg.model, cfg.seed)?;
            let state = OptimState::new(&params, hyper(cfg), cfg.lr0);
            (params, state, 0, format!("{LOG_HEADER}\n"))
        }
    };
    if start > cfg.total_steps {
        return Err(CliError::Invalid(format!(
            "checkpoint is at step {start}, beyond total_steps {}",
            cfg.total_steps
        )));
    }
    let end = opts
        .stop_after
        .map_or(cfg.total_steps, |s| s.min(cfg.total_steps))
        .max(start);

    let mut last_loss = None;
    let mut checkpoint = None;
    for step in start..end {
        let lr = cosine_lr(step as usize, cfg.total_steps as usize, cfg.lr0, cfg.lr_min)
            .map_err(|e| CliError::Invalid(e.to_string()))?;
        let batch = step_batch(&data, cfg, step)?;
        let (loss, grads) = loss_and_grads(&params, cfg, &batch)
            .map_err(|e| CliError::Invalid(format!("step {step}: {e}")))?;
        if !loss.is_finite() {
            return Err(CliError::NonFinite { step, loss });
        }
        state.lr = lr;
        state.step(&mut params, &grads)?;
        let _ = writeln!(log, "{step},{lr},{loss}");
        last_loss = Some(loss);

        let done = step + 1;
        if cfg.checkpoint_interval > 0 && done % cfg.checkpoint_interval == 0 {
            let path = cfg.out_dir.join(checkpoint_name(done));
            save(cfg, done, &params, &state, &path)?;
            fs::write(&log_path, &log).map_err(io_err(&log_path))?;
            checkpoint = Some(path);
        }
    }
    fs::write(&log_path, &log).map_err(io_err(&log_path))?;

    let path = if end == cfg.total_steps {
        cfg.out_dir.join(FINAL_CHECKPOINT)
    } else {
        cfg.out_dir.join(checkpoint_name(end))
    };
    if checkpoint.as_ref() != Some(&path) {
        save(cfg, end, &params, &state, &path)?;
    }
    Ok(TrainSummary {
        steps_done: end,
        last_loss,
        log_path,
        checkpoint: path,
        params,
    })
}

fn save(
    cfg: &RunConfig,
    step: u64,
    params: &ParamStore,
    state: &OptimState,
    path: &Path,
) -> Result<()> {
    Checkpoint {
        config: cfg.clone(),
        step,
        params: params.clone(),
        optim: Some(state.clone()),
    }
    .save(path)?;
    Ok(())
}
