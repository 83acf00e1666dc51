//! Synthetic paired data: `clean/`, `rainy/` and a `manifest.txt` whose
//! lines are relative to the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regformer::data::{
    clean_scene, load_image, save_image, synth_rain, write_manifest, RainParams,
};

use crate::{io_err, CliError, Result};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug)]
pub enum CleanSource {
    /// Every `.png`/`.ppm` file in the directory, in file-name order.
    Dir(PathBuf),
    /// `count` generated scenes of `size × size` pixels.
    Procedural { count: usize, size: usize },
}

/// Per-pair seeds `(scene, rain)` derived from the run seed and pair index.
pub fn pair_seeds(seed: u64, index: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    (rng.gen(), rng.gen())
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| {
            p.is_file()
                && p.extension().and_then(|e| e.to_str()).is_some_and(|e| {
                    matches!(e.to_ascii_lowercase().as_str(), "png" | "ppm" | "pnm")
                })
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Generates the pairs and returns the manifest path.
pub fn cmd_synth_data(
    source: &CleanSource,
    params: &RainParams,
    seed: u64,
    out_dir: &Path,
) -> Result<PathBuf> {
    params.validate()?;
    let (clean_dir, rainy_dir) = (out_dir.join("clean"), out_dir.join("rainy"));
    for d in [&clean_dir, &rainy_dir] {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }

    let names_and_images: Vec<(String, _)> = match source {
        CleanSource::Dir(dir) => {
            let files = list_images(dir)?;
            if files.is_empty() {
                return Err(CliError::Invalid(format!(
                    "{}: no .png or .ppm images",
                    dir.display()
                )));
            }
            files
                .iter()
                .map(|p| {
                    let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
                    Ok((format!("{stem}.png"), load_image(p)?))
                })
                .collect::<Result<_>>()?
        }
        CleanSource::Procedural { count, size } => {
            if *count == 0 || *size == 0 {
                return Err(CliError::Invalid(
                    "procedural source needs --scenes ≥ 1 and --size ≥ 1".into(),
                ));
            }
            (0..*count)
                .map(|i| {
                    (
                        format!("{i:04}.png"),
                        clean_scene(*size, *size, pair_seeds(seed, i).0),
                    )
                })
                .collect()
        }
    };

    let mut seen = std::collections::HashSet::new();
    let mut entries = Vec::new();
    for (i, (name, clean)) in names_and_images.iter().enumerate() {
        if !seen.insert(name.clone()) {
            return Err(CliError::Invalid(format!(
                "two inputs map to the output name {name}"
            )));
        }
        let rainy = synth_rain(clean, params, pair_seeds(seed, i).1)?;
        save_image(clean, &clean_dir.join(name))?;
        save_image(&rainy, &rainy_dir.join(name))?;
        entries.push((format!("clean/{name}"), format!("rainy/{name}")));
    }
    let manifest = out_dir.join(MANIFEST);
    write_manifest(&manifest, &entries)?;
    Ok(manifest)
}
