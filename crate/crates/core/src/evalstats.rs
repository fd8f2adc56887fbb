//! Evaluation metrics, feature comparison tables and binned summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::biomarkers::{FeatureRecord, FEATURE_NAMES};
use crate::raster::{Keypoint, LabelMask};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{groups} groups cannot fill {k} folds")]
    TooFewGroups { groups: usize, k: usize },
    #[error("unknown {what}: {value:?}")]
    UnknownCategory { what: &'static str, value: String },
}

/// `2|P∩G| / (|P|+|G|)`, with two empty masks scoring 1.
pub fn dice(pred: &LabelMask, gt: &LabelMask) -> Result<f64, EvalError> {
    if pred.dims() != gt.dims() {
        return Err(EvalError::DimensionMismatch {
            left: pred.dims(),
            right: gt.dims(),
        });
    }
    let (mut p, mut g, mut both) = (0u64, 0u64, 0u64);
    for (&a, &b) in pred.labels().iter().zip(gt.labels()) {
        let (a, b) = (a != 0, b != 0);
        p += u64::from(a);
        g += u64::from(b);
        both += u64::from(a && b);
    }
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (p + g) as f64)
}

pub fn keypoint_error(pred: Keypoint, gt: Keypoint) -> f64 {
    pred.distance(gt)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Mean absolute error of paired samples.
pub fn mae(x: &[f64], y: &[f64]) -> Option<f64> {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| (a - b).abs()).collect();
    mean(&d)
}

/// Pearson correlation; `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, my) = (mean(x)?, mean(y)?);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    (sxx > 0.0 && syy > 0.0).then(|| (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1 with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    /// Number of nonzero differences.
    pub n: usize,
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub p_value: f64,
    pub exact: bool,
}

/// Largest sample size handled by the exact null distribution.
pub const WILCOXON_EXACT_MAX: usize = 30;

/// Two-sided Wilcoxon signed-rank test on paired differences. Zero
/// differences are dropped; `n ≤ 30` uses the exact permutation
/// distribution of the (possibly tied) ranks, larger samples a normal
/// approximation with tie and continuity correction.
pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Wilcoxon {
    let d: Vec<f64> = diffs.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return Wilcoxon {
            n,
            w_plus: 0.0,
            p_value: 1.0,
            exact: true,
        };
    }
    let ranks = average_ranks(&d.iter().map(|v| v.abs()).collect::<Vec<_>>());
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    if n <= WILCOXON_EXACT_MAX {
        // Doubled ranks are integers even with ties.
        let r2: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let total: usize = r2.iter().sum();
        let mut counts = vec![0f64; total + 1];
        counts[0] = 1.0;
        for &r in &r2 {
            for s in (r..=total).rev() {
                counts[s] += counts[s - r];
            }
        }
        let all = 2f64.powi(n as i32);
        let w2 = (w_plus * 2.0).round() as usize;
        let lower: f64 = counts[..=w2].iter().sum::<f64>() / all;
        let upper: f64 = counts[w2..].iter().sum::<f64>() / all;
        return Wilcoxon {
            n,
            w_plus,
            p_value: (2.0 * lower.min(upper)).min(1.0),
            exact: true,
        };
    }
    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let mut tie = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    for g in sorted.chunk_by(|a, b| a == b) {
        let t = g.len() as f64;
        tie += t * t * t - t;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie / 48.0;
    let dev = ((w_plus - mu).abs() - 0.5).max(0.0);
    let p = if var > 0.0 {
        let z = dev / var.sqrt();
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        (2.0 * (1.0 - normal.cdf(z))).min(1.0)
    } else {
        1.0
    };
    Wilcoxon {
        n,
        w_plus,
        p_value: p,
        exact: false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Significance {
    None,
    P05,
    P001,
}

impl Significance {
    pub fn from_p(p: f64) -> Self {
        if p < 0.001 {
            Significance::P001
        } else if p < 0.05 {
            Significance::P05
        } else {
            Significance::None
        }
    }

    pub fn marker(self) -> &'static str {
        match self {
            Significance::None => "",
            Significance::P05 => "*",
            Significance::P001 => "†",
        }
    }
}

/// Minimum number of paired samples for a comparison.
pub const MIN_PAIRS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemStats {
    pub system: String,
    pub n: usize,
    pub mae: Option<f64>,
    pub r: Option<f64>,
    /// Against the reference system; `None` for the reference itself.
    pub p_value: Option<f64>,
    pub significance: Significance,
    pub insufficient: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub feature: String,
    pub grader_mean: Option<f64>,
    pub systems: Vec<SystemStats>,
}

/// Per-feature MAE and Pearson r of each system against the reference
/// features, with a paired test of each system's absolute errors against
/// those of the first system.
pub fn compare_features<K: Ord + Clone>(
    gt: &BTreeMap<K, FeatureRecord>,
    systems: &[(String, BTreeMap<K, FeatureRecord>)],
) -> Vec<ComparisonRow> {
    FEATURE_NAMES
        .iter()
        .map(|&name| {
            let gt_vals: BTreeMap<&K, f64> = gt.iter().filter_map(|(k, r)| Some((k, r.get(name)?))).collect();
            let grader = mean(&gt_vals.values().copied().collect::<Vec<_>>());
            let errors: Vec<BTreeMap<&K, f64>> = systems
                .iter()
                .map(|(_, recs)| {
                    gt_vals
                        .iter()
                        .filter_map(|(k, g)| Some((*k, recs.get(*k)?.get(name)? - g)))
                        .collect()
                })
                .collect();
            let stats = systems
                .iter()
                .enumerate()
                .map(|(i, (sys, _))| {
                    let err = &errors[i];
                    let n = err.len();
                    let insufficient = n < MIN_PAIRS;
                    let (xs, ys): (Vec<f64>, Vec<f64>) =
                        err.iter().map(|(k, e)| (gt_vals[*k], gt_vals[*k] + e)).unzip();
                    let p_value = (i > 0 && !insufficient)
                        .then(|| {
                            let d: Vec<f64> = err
                                .iter()
                                .filter_map(|(k, e)| Some(e.abs() - errors[0].get(*k)?.abs()))
                                .collect();
                            (d.len() >= MIN_PAIRS).then(|| wilcoxon_signed_rank(&d).p_value)
                        })
                        .flatten();
                    SystemStats {
                        system: sys.clone(),
                        n,
                        mae: (!insufficient).then(|| mae(&xs, &ys)).flatten(),
                        r: (!insufficient).then(|| pearson(&xs, &ys)).flatten(),
                        p_value,
                        significance: p_value.map_or(Significance::None, Significance::from_p),
                        insufficient,
                    }
                })
                .collect();
            ComparisonRow {
                feature: name.to_string(),
                grader_mean: grader,
                systems: stats,
            }
        })
        .collect()
}

/// Fold index per item: distinct groups are shuffled under `seed` and dealt
/// round-robin, so no group spans two folds and fold sizes differ by at most
/// one group.
pub fn group_kfold<G: Ord + Clone>(groups: &[G], k: usize, seed: u64) -> Result<Vec<usize>, EvalError> {
    let distinct: Vec<G> = groups.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if k == 0 || distinct.len() < k {
        return Err(EvalError::TooFewGroups {
            groups: distinct.len(),
            k,
        });
    }
    let mut order: Vec<usize> = (0..distinct.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0usize; distinct.len()];
    for (pos, &g) in order.iter().enumerate() {
        fold_of[g] = pos % k;
    }
    Ok(groups
        .iter()
        .map(|g| fold_of[distinct.binary_search(g).expect("group present")])
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quality {
    Good,
    Usable,
    Bad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Macula,
    Disc,
    Other,
}

impl Quality {
    pub const ALL: [Quality; 3] = [Quality::Good, Quality::Usable, Quality::Bad];
}

impl Region {
    pub const ALL: [Region; 3] = [Region::Macula, Region::Disc, Region::Other];
}

impl fmt::Display for Quality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Quality::Good => "good",
            Quality::Usable => "usable",
            Quality::Bad => "bad",
        })
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::Macula => "macula",
            Region::Disc => "disc",
            Region::Other => "other",
        })
    }
}

impl FromStr for Quality {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "good" => Ok(Quality::Good),
            "usable" => Ok(Quality::Usable),
            "bad" | "unusable" => Ok(Quality::Bad),
            _ => Err(EvalError::UnknownCategory {
                what: "quality",
                value: s.to_string(),
            }),
        }
    }
}

impl FromStr for Region {
    type Err = EvalError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "macula" => Ok(Region::Macula),
            "disc" => Ok(Region::Disc),
            "other" => Ok(Region::Other),
            _ => Err(EvalError::UnknownCategory {
                what: "region",
                value: s.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub image_id: String,
    pub group_id: String,
    pub quality: Option<Quality>,
    pub region: Option<Region>,
    /// Dice per class name.
    pub dice: BTreeMap<String, f64>,
    pub fovea_l2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinAxis {
    Quality,
    Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub median: Option<f64>,
    pub q1: Option<f64>,
    pub q3: Option<f64>,
    /// Most extreme values within 1.5·IQR of the quartiles.
    pub whisker_low: Option<f64>,
    pub whisker_high: Option<f64>,
}

/// Linear-interpolation quantile of sorted data (inclusive rule).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn box_stats(values: &[f64]) -> BoxStats {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&v, 0.25);
    let q3 = quantile_sorted(&v, 0.75);
    let (whisker_low, whisker_high) = match (q1, q3) {
        (Some(a), Some(b)) => {
            let iqr = b - a;
            (
                v.iter().copied().find(|x| *x >= a - 1.5 * iqr),
                v.iter().rev().copied().find(|x| *x <= b + 1.5 * iqr),
            )
        }
        _ => (None, None),
    };
    BoxStats {
        n: v.len(),
        median: quantile_sorted(&v, 0.5),
        q1,
        q3,
        whisker_low,
        whisker_high,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinSummary {
    pub bin: String,
    pub stats: BoxStats,
}

/// Box statistics of `metric` for every category of `axis`, in category
/// order; empty categories are reported with `n = 0`. Records lacking the
/// metric or the category are skipped.
pub fn binned_summary(records: &[EvalRecord], axis: BinAxis, metric: &str) -> Vec<BinSummary> {
    let bins: Vec<String> = match axis {
        BinAxis::Quality => Quality::ALL.iter().map(ToString::to_string).collect(),
        BinAxis::Region => Region::ALL.iter().map(ToString::to_string).collect(),
    };
    bins.into_iter()
        .map(|bin| {
            let values: Vec<f64> = records
                .iter()
                .filter(|r| {
                    let cat = match axis {
                        BinAxis::Quality => r.quality.map(|q| q.to_string()),
                        BinAxis::Region => r.region.map(|q| q.to_string()),
                    };
                    cat.as_deref() == Some(bin.as_str())
                })
                .filter_map(|r| r.dice.get(metric).copied())
                .collect();
            BinSummary {
                bin,
                stats: box_stats(&values),
            }
        })
        .collect()
}
