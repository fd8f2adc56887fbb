use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Deserialize;
use vasculo::biomarkers::{FeatureRecord, VesselClass, FEATURE_NAMES};
use vasculo::evalstats::{
    binned_summary, compare_features, dice, group_kfold, keypoint_error, BinAxis, EvalRecord, Quality, Region,
};
use vasculo::raster::{Keypoint, LabelMask};

use crate::config::RunConfig;
use crate::extract::features_path;
use crate::io::{cell, discover_masks, load_av, read_keypoints, write_atomic, MaskSource};
use crate::Outcome;

pub struct EvalArgs<'a> {
    pub gt: &'a Path,
    pub preds: &'a [PathBuf],
    pub metadata: &'a Path,
}

#[derive(Debug, Deserialize)]
struct MetaRow {
    image_id: String,
    group_id: String,
    #[serde(default)]
    quality: String,
    #[serde(default)]
    region: String,
}

struct Meta {
    group_id: String,
    quality: Option<Quality>,
    region: Option<Region>,
}

fn read_metadata(path: &Path) -> Result<BTreeMap<String, Meta>> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = BTreeMap::new();
    for row in rdr.deserialize() {
        let r: MetaRow = row.with_context(|| format!("parsing {}", path.display()))?;
        let quality = (!r.quality.trim().is_empty()).then(|| r.quality.parse()).transpose()?;
        let region = (!r.region.trim().is_empty()).then(|| r.region.parse()).transpose()?;
        out.insert(
            r.image_id,
            Meta {
                group_id: r.group_id,
                quality,
                region,
            },
        );
    }
    Ok(out)
}

type FeatureTable = BTreeMap<(String, VesselClass), FeatureRecord>;

/// Reads a feature CSV written by `extract`.
pub fn read_features(path: &Path) -> Result<FeatureTable> {
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = rdr.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(id_col), Some(class_col)) = (col("image_id"), col("class")) else {
        bail!("{}: missing image_id/class columns", path.display());
    };
    let cols: Vec<Option<usize>> = FEATURE_NAMES.iter().map(|n| col(n)).collect();
    let mut out = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let class = match &row[class_col] {
            "artery" => VesselClass::Artery,
            "vein" => VesselClass::Vein,
            other => bail!("{}: unknown class {other:?}", path.display()),
        };
        let mut values = [None; 12];
        for (v, c) in values.iter_mut().zip(&cols) {
            if let Some(s) = c.and_then(|c| row.get(c)).filter(|s| !s.is_empty()) {
                *v = Some(
                    s.parse::<f64>()
                        .with_context(|| format!("{}: bad value {s:?}", path.display()))?,
                );
            }
        }
        out.insert((row[id_col].to_string(), class), FeatureRecord::from_values(values));
    }
    Ok(out)
}

const DICE_CLASSES: [&str; 3] = ["artery", "vein", "vessel"];

fn union(a: &LabelMask, b: &LabelMask) -> LabelMask {
    LabelMask::from_fn(a.width(), a.height(), |x, y| a.get(x, y) != 0 || b.get(x, y) != 0)
}

fn dice_scores(gt: &MaskSource, pred: &MaskSource, cfg: &RunConfig) -> Result<BTreeMap<String, f64>> {
    let (ga, gv) = load_av(gt, cfg.scheme.into())?;
    let (pa, pv) = load_av(pred, cfg.scheme.into())?;
    let scores = [
        dice(&pa, &ga)?,
        dice(&pv, &gv)?,
        dice(&union(&pa, &pv), &union(&ga, &gv))?,
    ];
    Ok(DICE_CLASSES.iter().map(|c| c.to_string()).zip(scores).collect())
}

fn optional_keypoints(dir: &Path) -> Result<BTreeMap<String, Keypoint>> {
    let p = dir.join("fovea.csv");
    if p.exists() {
        read_keypoints(&p)
    } else {
        Ok(BTreeMap::new())
    }
}

fn system_names(preds: &[PathBuf]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    preds
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let base = p
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| format!("system{i}"));
            let mut name = base.clone();
            let mut k = 2;
            while !seen.insert(name.clone()) {
                name = format!("{base}_{k}");
                k += 1;
            }
            name
        })
        .collect()
}

pub fn run(args: &EvalArgs, out: &Path, cfg: &RunConfig) -> Result<Outcome> {
    let meta = read_metadata(args.metadata)?;
    let gt_masks = discover_masks(args.gt)?;
    let pred_masks: Vec<BTreeMap<String, MaskSource>> =
        args.preds.iter().map(|p| discover_masks(p)).collect::<Result<_>>()?;
    let ids: Vec<&String> = meta.keys().filter(|id| gt_masks.contains_key(*id)).collect();
    if ids.is_empty() {
        bail!("no image ids shared by the metadata and {}", args.gt.display());
    }
    let names = system_names(args.preds);
    let groups: Vec<&str> = ids.iter().map(|id| meta[*id].group_id.as_str()).collect();
    let folds = match group_kfold(&groups, cfg.eval.folds, cfg.seed) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("folds not assigned: {e}");
            None
        }
    };
    let gt_fovea = optional_keypoints(args.gt)?;
    let mut failures = 0usize;
    let mut metrics =
        String::from("image_id,group_id,quality,region,fold,system,dice_artery,dice_vein,dice_vessel,fovea_l2\n");
    let mut binned = String::from("system,metric,axis,bin,n,median,q1,q3,whisker_low,whisker_high\n");
    for (s, name) in names.iter().enumerate() {
        let pred_fovea = optional_keypoints(&args.preds[s])?;
        let results: Vec<Result<EvalRecord>> = ids
            .par_iter()
            .map(|id| {
                let pred = pred_masks[s]
                    .get(*id)
                    .with_context(|| format!("{id}: no prediction from {name}"))?;
                let m = &meta[*id];
                Ok(EvalRecord {
                    image_id: (*id).clone(),
                    group_id: m.group_id.clone(),
                    quality: m.quality,
                    region: m.region,
                    dice: dice_scores(&gt_masks[*id], pred, cfg).with_context(|| format!("{id} ({name})"))?,
                    fovea_l2: match (pred_fovea.get(*id), gt_fovea.get(*id)) {
                        (Some(&p), Some(&g)) => Some(keypoint_error(p, g)),
                        _ => None,
                    },
                })
            })
            .collect();
        let mut records = Vec::new();
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(rec) => {
                    let fold = folds.as_ref().map_or(String::new(), |f| f[i].to_string());
                    let _ = writeln!(
                        metrics,
                        "{},{},{},{},{fold},{name},{},{},{},{}",
                        rec.image_id,
                        rec.group_id,
                        rec.quality.map_or(String::new(), |q| q.to_string()),
                        rec.region.map_or(String::new(), |q| q.to_string()),
                        cell(rec.dice.get("artery").copied()),
                        cell(rec.dice.get("vein").copied()),
                        cell(rec.dice.get("vessel").copied()),
                        cell(rec.fovea_l2),
                    );
                    records.push(rec);
                }
                Err(e) => {
                    log::error!("{e:#}");
                    failures += 1;
                }
            }
        }
        for metric in DICE_CLASSES {
            for (axis, label) in [(BinAxis::Quality, "quality"), (BinAxis::Region, "region")] {
                for b in binned_summary(&records, axis, metric)
                    .into_iter()
                    .filter(|b| b.stats.n > 0)
                {
                    let st = &b.stats;
                    let _ = writeln!(
                        binned,
                        "{name},{metric},{label},{},{},{},{},{},{},{}",
                        b.bin,
                        st.n,
                        cell(st.median),
                        cell(st.q1),
                        cell(st.q3),
                        cell(st.whisker_low),
                        cell(st.whisker_high)
                    );
                }
            }
        }
    }
    write_atomic(&out.join("metrics.csv"), metrics.as_bytes())?;
    write_atomic(&out.join("binned_summary.csv"), binned.as_bytes())?;
    write_atomic(&out.join("comparison.csv"), comparison(args, &names, &ids)?.as_bytes())?;
    Ok(Outcome::new(ids.len() * names.len(), failures))
}

/// Feature comparison table; header only when the ground truth has no
/// feature file.
fn comparison(args: &EvalArgs, names: &[String], ids: &[&String]) -> Result<String> {
    let mut text = String::from("class,feature,grader_mean");
    for n in names {
        let _ = write!(text, ",{n}_n,{n}_mae,{n}_r,{n}_p,{n}_sig");
    }
    text.push('\n');
    let gt_path = features_path(args.gt);
    if !gt_path.exists() {
        log::warn!("{}: not found, comparison table left empty", gt_path.display());
        return Ok(text);
    }
    let keep: BTreeSet<&str> = ids.iter().map(|s| s.as_str()).collect();
    let gt = read_features(&gt_path)?;
    let systems: Vec<FeatureTable> = args
        .preds
        .iter()
        .map(|p| {
            let f = features_path(p);
            if f.exists() {
                read_features(&f)
            } else {
                log::warn!("{}: not found, system has no feature rows", f.display());
                Ok(BTreeMap::new())
            }
        })
        .collect::<Result<_>>()?;
    for class in [VesselClass::Artery, VesselClass::Vein] {
        let select = |t: &FeatureTable| -> BTreeMap<String, FeatureRecord> {
            t.iter()
                .filter(|((id, c), _)| *c == class && keep.contains(id.as_str()))
                .map(|((id, _), r)| (id.clone(), r.clone()))
                .collect()
        };
        let sys: Vec<(String, BTreeMap<String, FeatureRecord>)> =
            names.iter().cloned().zip(systems.iter().map(select)).collect();
        for row in compare_features(&select(&gt), &sys) {
            let _ = write!(text, "{class},{},{}", row.feature, cell(row.grader_mean));
            for s in &row.systems {
                let sig = if s.insufficient {
                    "insufficient"
                } else {
                    s.significance.marker()
                };
                let _ = write!(text, ",{},{},{},{},{sig}", s.n, cell(s.mae), cell(s.r), cell(s.p_value));
            }
            text.push('\n');
        }
    }
    Ok(text)
}
