use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use vasculo::biomarkers::{csv_header, csv_row, extract_features, Disc, ImageFeatures, RegionSpec, VesselClass};
use vasculo::prep::{transform_mask, PrepRecord};
use vasculo::raster::{load_mask, Keypoint, LabelMask, LabelScheme};

use crate::config::RunConfig;
use crate::io::{discover_masks, load_av, read_keypoints, write_atomic, MaskSource};
use crate::Outcome;

pub struct ExtractArgs<'a> {
    pub masks: &'a Path,
    /// Directory of `<id>_bounds.json` records written by `prep`.
    pub bounds: Option<&'a Path>,
    /// Directory of `<id>.png` binary optic disc masks.
    pub disc: Option<&'a Path>,
    /// `image_id,x,y` fovea positions in the mask frame.
    pub fovea: Option<&'a Path>,
}

/// Maps masks and points into the normalized frame when they are given in
/// the source frame of a prep record.
struct Frame<'a> {
    record: Option<&'a PrepRecord>,
    source: bool,
}

impl Frame<'_> {
    fn mask(&self, m: LabelMask) -> Result<LabelMask> {
        let Some(r) = self.record else { return Ok(m) };
        let t = &r.transform;
        if self.source {
            if m.dims() != (t.source_width, t.source_height) {
                bail!(
                    "mask is {:?}, expected the source frame {:?}",
                    m.dims(),
                    (t.source_width, t.source_height)
                );
            }
            Ok(transform_mask(&m, t)?)
        } else if m.dims() == (t.size, t.size) {
            Ok(m)
        } else {
            bail!(
                "mask is {:?}, expected the normalized frame {:?}",
                m.dims(),
                (t.size, t.size)
            )
        }
    }

    fn point(&self, p: Keypoint) -> Keypoint {
        match self.record {
            Some(r) if self.source => r.transform.forward(p),
            _ => p,
        }
    }
}

fn read_record(dir: &Path, id: &str) -> Result<Option<PrepRecord>> {
    let path = dir.join(format!("{id}_bounds.json"));
    if !path.exists() {
        log::warn!("{id}: no bounds record, using the whole frame as region of interest");
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Some(
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?,
    ))
}

fn extract_one(
    id: &str,
    src: &MaskSource,
    args: &ExtractArgs,
    fovea: &BTreeMap<String, Keypoint>,
    cfg: &RunConfig,
) -> Result<ImageFeatures> {
    let (artery, vein) = load_av(src, cfg.scheme.into())?;
    let record = match args.bounds {
        Some(dir) => read_record(dir, id)?,
        None => None,
    };
    // Masks already matching the source frame are resampled; otherwise they
    // must already be normalized.
    let source = record
        .as_ref()
        .is_some_and(|r| artery.dims() == (r.transform.source_width, r.transform.source_height));
    let frame = Frame {
        record: record.as_ref(),
        source,
    };
    let artery = frame.mask(artery)?;
    let vein = frame.mask(vein)?;
    let (w, h) = artery.dims();
    let disc = match args.disc.map(|d| d.join(format!("{id}.png"))) {
        Some(p) if p.exists() => {
            let d = Disc::from_mask(&frame.mask(load_mask(&p, LabelScheme::Binary)?)?);
            if d.is_none() {
                log::warn!("{id}: empty disc mask");
            }
            d
        }
        _ => {
            log::warn!("{id}: no disc mask, disc-relative features left empty");
            None
        }
    };
    let region = RegionSpec {
        disc,
        fovea: fovea.get(id).map(|&p| frame.point(p)),
        laterality: None,
        roi: record.as_ref().map(|r| r.normalized_bounds.roi_mask(w, h)),
    };
    Ok(extract_features(&artery, &vein, &region, &cfg.features)?)
}

pub fn run(args: &ExtractArgs, out: &Path, cfg: &RunConfig) -> Result<Outcome> {
    let masks = discover_masks(args.masks)?;
    if masks.is_empty() {
        bail!("no masks in {}", args.masks.display());
    }
    let fovea = match args.fovea {
        Some(p) => read_keypoints(p)?,
        None => BTreeMap::new(),
    };
    let items: Vec<(&String, &MaskSource)> = masks.iter().collect();
    let results: Vec<Option<ImageFeatures>> = items
        .par_iter()
        .map(|(id, src)| match extract_one(id, src, args, &fovea, cfg) {
            Ok(f) => {
                log::info!("{id}: features extracted");
                Some(f)
            }
            Err(e) => {
                log::error!("{id}: {e:#}");
                None
            }
        })
        .collect();
    let mut text = csv_header();
    text.push('\n');
    for ((id, _), r) in items.iter().zip(&results) {
        if let Some(f) = r {
            for (class, rec) in [(VesselClass::Artery, &f.artery), (VesselClass::Vein, &f.vein)] {
                text.push_str(&csv_row(id, class, rec));
                text.push('\n');
            }
        }
    }
    write_atomic(&features_path(out), text.as_bytes())?;
    let failures = results.iter().filter(|r| r.is_none()).count();
    Ok(Outcome::new(items.len(), failures))
}

pub fn features_path(dir: &Path) -> PathBuf {
    dir.join("features.csv")
}
