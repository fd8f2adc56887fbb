use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use vasculo::raster::{load_mask, split_av, Keypoint, LabelMask, LabelScheme};

/// Write via a temporary sibling and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path
        .file_name()
        .ok_or_else(|| anyhow!("no file name in {}", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

/// Regular files in `dir`, sorted by name.
pub fn list_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading directory {}", dir.display()))? {
        let p = entry?.path();
        if p.is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub fn has_extension(p: &Path, exts: &[&str]) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| exts.iter().any(|x| x.eq_ignore_ascii_case(e)))
}

/// Where the artery and vein labels of one image live.
#[derive(Debug, Clone, PartialEq)]
pub enum MaskSource {
    Single(PathBuf),
    Pair { artery: PathBuf, vein: PathBuf },
}

/// Mask files keyed by image id: `<id>.png` single files, or
/// `<id>_artery.png` with `<id>_vein.png`.
pub fn discover_masks(dir: &Path) -> Result<BTreeMap<String, MaskSource>> {
    let files: Vec<PathBuf> = list_files(dir)?
        .into_iter()
        .filter(|p| has_extension(p, &["png"]))
        .collect();
    let mut out = BTreeMap::new();
    let mut arteries = BTreeMap::new();
    let mut veins = BTreeMap::new();
    for p in files {
        let s = stem(&p);
        if let Some(id) = s.strip_suffix("_artery") {
            arteries.insert(id.to_string(), p);
        } else if let Some(id) = s.strip_suffix("_vein") {
            veins.insert(id.to_string(), p);
        } else {
            out.insert(s, MaskSource::Single(p));
        }
    }
    for (id, artery) in arteries {
        match veins.remove(&id) {
            Some(vein) => {
                out.insert(id, MaskSource::Pair { artery, vein });
            }
            None => log::warn!("{}: artery mask without vein mask, skipped", artery.display()),
        }
    }
    for (_, v) in veins {
        log::warn!("{}: vein mask without artery mask, skipped", v.display());
    }
    Ok(out)
}

/// Binary artery and vein masks. Single binary files give the same vessel
/// mask for both classes.
pub fn load_av(src: &MaskSource, scheme: LabelScheme) -> Result<(LabelMask, LabelMask)> {
    match src {
        MaskSource::Single(p) => {
            let m = load_mask(p, scheme)?;
            match scheme {
                LabelScheme::Av4 => Ok(split_av(&m)?),
                LabelScheme::Binary => Ok((m.clone(), m)),
            }
        }
        MaskSource::Pair { artery, vein } => {
            let a = load_mask(artery, LabelScheme::Binary)?;
            let v = load_mask(vein, LabelScheme::Binary)?;
            if a.dims() != v.dims() {
                bail!("artery {:?} and vein {:?} masks differ in size", a.dims(), v.dims());
            }
            Ok((a, v))
        }
    }
}

/// `image_id,x,y` rows.
pub fn read_keypoints(path: &Path) -> Result<BTreeMap<String, Keypoint>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize() {
        let (id, x, y): (String, f64, f64) = row.with_context(|| format!("parsing {}", path.display()))?;
        out.insert(id, Keypoint::new(x, y));
    }
    Ok(out)
}

/// Six-decimal value; empty for missing.
pub fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}
