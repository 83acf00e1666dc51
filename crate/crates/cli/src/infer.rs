//! Inference, evaluation and mask dumps from a checkpoint.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;
use regformer::data::{
    image_to_tensor, load_image, read_manifest, save_image, tensor_to_image, Image,
};
use regformer::metrics::{evaluate_pair, MetricReport};
use regformer::model::{regformer_forward, regformer_forward_traced, MaskRecord};
use regformer::nn::ParamStore;
use regformer::Tensor;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::{io_err, CliError, Result};

/// Weights plus the config they were trained with.
pub struct LoadedModel {
    pub config: RunConfig,
    pub params: ParamStore,
}

/// Loads a checkpoint. When `expected` is given, its model keys must match
/// the embedded config exactly.
pub fn load_model(ckpt: &Path, expected: Option<&RunConfig>) -> Result<LoadedModel> {
    let ck = Checkpoint::load(ckpt)?;
    if let Some(cfg) = expected {
        let diff = cfg.model_differences(&ck.config);
        if !diff.is_empty() {
            return Err(CliError::ConfigMismatch(diff));
        }
    }
    Ok(LoadedModel {
        config: ck.config,
        params: ck.params,
    })
}

impl LoadedModel {
    pub fn restore(&self, img: &Image) -> Result<Image> {
        let out = regformer_forward(&self.params, &self.config.model, &image_to_tensor(img))?;
        Ok(tensor_to_image(&out)?)
    }

    pub fn masks(&self, img: &Image) -> Result<Vec<MaskRecord>> {
        let (_, masks) =
            regformer_forward_traced(&self.params, &self.config.model, &image_to_tensor(img))?;
        Ok(masks)
    }
}

pub fn cmd_infer(model: &LoadedModel, input: &Path, output: &Path) -> Result<()> {
    let img = load_image(input)?;
    let out = model.restore(&img)?;
    if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    save_image(&out, output)?;
    Ok(())
}

/// Restores every rainy image in `manifest` and scores it against its clean
/// counterpart. Row names are the rainy file names as written in the manifest.
pub fn cmd_eval(model: &LoadedModel, manifest: &Path, out_csv: &Path) -> Result<MetricReport> {
    let pairs = read_manifest(manifest)?;
    let missing: Vec<String> = pairs
        .iter()
        .flat_map(|p| [&p.clean, &p.rainy])
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::MissingFiles(missing));
    }
    let base = manifest.parent().unwrap_or(Path::new(""));
    let mut report = MetricReport::default();
    for pair in &pairs {
        let clean = load_image(&pair.clean)?;
        let restored = model.restore(&load_image(&pair.rainy)?)?;
        let name = pair.rainy.strip_prefix(base).unwrap_or(&pair.rainy);
        report.push(
            name.display().to_string(),
            evaluate_pair(&clean, &restored)?,
        );
    }
    if let Some(dir) = out_csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(out_csv, report.to_csv()).map_err(io_err(out_csv))?;
    Ok(report)
}

fn mask_png(t: &Tensor) -> Result<GrayImage> {
    let (_, h, w) = t.dims3().map_err(regformer::model::ModelError::from)?;
    let px = t
        .data()
        .iter()
        .map(|&v| if v > 0.5 { 255 } else { 0 })
        .collect();
    GrayImage::from_raw(w as u32, h as u32, px)
        .ok_or_else(|| CliError::Invalid("mask buffer size mismatch".into()))
}

pub fn mask_file_names(level: usize, rtc: usize) -> (String, String) {
    (
        format!("level{level}_rtc{rtc}_rain.png"),
        format!("level{level}_rtc{rtc}_unaffected.png"),
    )
}

pub const GAINS_FILE: &str = "gains.txt";

/// Writes both binary masks of every cascade as black/white PNGs plus a
/// `gains.txt` sidecar with the channel-averaged gains. Returns the files
/// written, masks first.
pub fn cmd_mask_dump(model: &LoadedModel, input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let img = load_image(input)?;
    let masks = model.masks(&img)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    let mut gains = String::from("# level rtc mean_rain_gain mean_unaffected_gain\n");
    for rec in &masks {
        let (rain_name, unaffected_name) = mask_file_names(rec.level, rec.rtc);
        for (name, t) in [(rain_name, &rec.rain), (unaffected_name, &rec.unaffected)] {
            let path = out_dir.join(name);
            mask_png(t)?
                .save(&path)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
            written.push(path);
        }
        let mean = |t: &Tensor| t.sum() / t.numel() as f64;
        let _ = writeln!(
            gains,
            "{} {} {} {}",
            rec.level,
            rec.rtc,
            mean(&rec.rain_gain),
            mean(&rec.unaffected_gain)
        );
    }
    let path = out_dir.join(GAINS_FILE);
    fs::write(&path, gains).map_err(io_err(&path))?;
    written.push(path);
    Ok(written)
}
