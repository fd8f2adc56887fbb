use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use vasculo::prep::prepare;
use vasculo::raster::{encode_rgb_png, load_rgb};

use crate::config::RunConfig;
use crate::io::{has_extension, list_files, stem, write_atomic};
use crate::Outcome;

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "tif", "tiff"];

fn prep_one(path: &Path, out: &Path, cfg: &RunConfig) -> Result<()> {
    let image = load_rgb(path)?;
    let p = prepare(&image, &cfg.detect, &cfg.enhance)?;
    let s = stem(path);
    write_atomic(&out.join(format!("{s}_norm.png")), &encode_rgb_png(&p.normalized))?;
    write_atomic(&out.join(format!("{s}_enh.png")), &encode_rgb_png(&p.enhanced))?;
    let mut json = serde_json::to_string_pretty(&p.record)?;
    json.push('\n');
    write_atomic(&out.join(format!("{s}_bounds.json")), json.as_bytes())?;
    Ok(())
}

pub fn run(images: &Path, out: &Path, cfg: &RunConfig) -> Result<Outcome> {
    let files: Vec<_> = list_files(images)?
        .into_iter()
        .filter(|p| has_extension(p, &IMAGE_EXTENSIONS))
        .collect();
    if files.is_empty() {
        bail!("no images in {}", images.display());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let failures = files
        .par_iter()
        .map(|p| match prep_one(p, out, cfg) {
            Ok(()) => {
                log::info!("{}: prepared", p.display());
                0
            }
            Err(e) => {
                log::error!("{}: {e:#}", p.display());
                1
            }
        })
        .sum::<usize>();
    Ok(Outcome::new(files.len(), failures))
}
