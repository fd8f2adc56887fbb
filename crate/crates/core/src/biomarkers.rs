//! Image-level vascular biomarkers computed per vessel class.

use std::fmt;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Keypoint, LabelMask};
use crate::vesselgeom::{
    self, angle_between, bifurcation_angle, fit_chain, inflection_count, mean_curvature, measure_widths, tortuosity,
    width_at, BifAngleConfig, Point, SegmentSpline,
};
use crate::vesselgraph::{build_graph, orient_graph, skeletonize, NodeKind, VesselGraph};

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("region of interest is empty")]
    EmptyRoi,
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VesselClass {
    Artery,
    Vein,
}

impl VesselClass {
    /// Branching coefficient of the revised Knudtson formula.
    pub fn knudtson_k(self) -> f64 {
        match self {
            VesselClass::Artery => 0.88,
            VesselClass::Vein => 0.95,
        }
    }
}

impl fmt::Display for VesselClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VesselClass::Artery => "artery",
            VesselClass::Vein => "vein",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Laterality {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Disc {
    pub center: Keypoint,
    pub radius: f64,
    pub mask: Option<LabelMask>,
}

impl Disc {
    /// Centroid and equal-area radius of the foreground; `None` if empty.
    pub fn from_mask(mask: &LabelMask) -> Option<Disc> {
        let (mut n, mut sx, mut sy) = (0usize, 0.0, 0.0);
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(x, y) != 0 {
                    n += 1;
                    sx += x as f64;
                    sy += y as f64;
                }
            }
        }
        (n > 0).then(|| Disc {
            center: Keypoint::new(sx / n as f64, sy / n as f64),
            radius: (n as f64 / std::f64::consts::PI).sqrt(),
            mask: Some(mask.clone()),
        })
    }

    pub fn contains(&self, p: Keypoint) -> bool {
        match &self.mask {
            Some(m) => m.is_set(p.x.round() as isize, p.y.round() as isize),
            None => p.distance(self.center) <= self.radius,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegionSpec {
    pub disc: Option<Disc>,
    pub fovea: Option<Keypoint>,
    pub laterality: Option<Laterality>,
    /// Fundus region; `None` means the whole frame.
    pub roi: Option<LabelMask>,
}

impl RegionSpec {
    /// `+1` if the temporal side lies at larger x than the disc, `-1` if at
    /// smaller x. Uses the fovea, then laterality, then the disc's offset from
    /// the frame center (the disc sits nasally in fovea-centered images).
    pub fn temporal_sign(&self, frame_width: usize) -> Option<f64> {
        let disc = self.disc.as_ref()?;
        if let Some(f) = self.fovea {
            if f.x != disc.center.x {
                return Some((f.x - disc.center.x).signum());
            }
        }
        if let Some(l) = self.laterality {
            return Some(match l {
                Laterality::Right => -1.0,
                Laterality::Left => 1.0,
            });
        }
        let mid = (frame_width as f64 - 1.0) / 2.0;
        (disc.center.x != mid).then(|| if disc.center.x > mid { -1.0 } else { 1.0 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TortuositySource {
    /// Spline resampled every 1 px of arc.
    Spline,
    /// Raw skeleton pixels.
    Chain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    /// Measurement circle radii for CRE, in disc radii.
    pub rho: Vec<f64>,
    /// Distance from a bifurcation at which child directions are taken, px.
    pub delta: f64,
    /// Width sampling interval along a segment, px.
    pub width_step: f64,
    /// Curvature deadband for inflection counting, px⁻¹.
    pub inflection_eps: f64,
    /// Spurs shorter than this are pruned from the skeleton graph, px.
    pub prune_len: f64,
    /// Multiplier applied to reported curvature.
    pub curvature_scale: f64,
    pub tortuosity_source: TortuositySource,
    /// Skip bifurcations lying inside the optic disc.
    pub exclude_disc_bifurcations: bool,
    /// Arc length from a CRE crossing over which local widths are pooled, px.
    pub cre_window: f64,
    /// Arcade roots must lie within this many disc radii of the disc center.
    pub arcade_root_radius: f64,
    /// Arc length over which arcade direction is averaged, in disc radii.
    pub arcade_span: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            rho: vec![3.0],
            delta: 10.0,
            width_step: 2.0,
            inflection_eps: 0.002,
            prune_len: 10.0,
            curvature_scale: 1.0,
            tortuosity_source: TortuositySource::Spline,
            exclude_disc_bifurcations: true,
            cre_window: 4.0,
            arcade_root_radius: 2.0,
            arcade_span: 2.0,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        let positive = [
            ("delta", self.delta),
            ("width_step", self.width_step),
            ("curvature_scale", self.curvature_scale),
            ("arcade_root_radius", self.arcade_root_radius),
            ("arcade_span", self.arcade_span),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FeatureError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("inflection_eps", self.inflection_eps),
            ("prune_len", self.prune_len),
            ("cre_window", self.cre_window),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(FeatureError::Config(format!("{name} must be non-negative, got {v}")));
            }
        }
        if self.rho.is_empty() || self.rho.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(FeatureError::Config(
                "rho must be a nonempty list of positive radii".into(),
            ));
        }
        Ok(())
    }
}

pub const FEATURE_NAMES: [&str; 12] = [
    "temporal_angle",
    "cre",
    "vascular_density",
    "caliber_med",
    "caliber_std",
    "tortuosity_med",
    "tortuosity_lw",
    "curvature_med",
    "inflection_med",
    "bif_angle_mean",
    "bif_angle_med",
    "n_bifurcations",
];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub temporal_angle: Option<f64>,
    pub cre: Option<f64>,
    pub vascular_density: Option<f64>,
    pub caliber_med: Option<f64>,
    pub caliber_std: Option<f64>,
    pub tortuosity_med: Option<f64>,
    pub tortuosity_lw: Option<f64>,
    pub curvature_med: Option<f64>,
    pub inflection_med: Option<f64>,
    pub bif_angle_mean: Option<f64>,
    pub bif_angle_med: Option<f64>,
    pub n_bifurcations: Option<usize>,
}

impl FeatureRecord {
    /// Values in [`FEATURE_NAMES`] order.
    pub fn values(&self) -> [Option<f64>; 12] {
        [
            self.temporal_angle,
            self.cre,
            self.vascular_density,
            self.caliber_med,
            self.caliber_std,
            self.tortuosity_med,
            self.tortuosity_lw,
            self.curvature_med,
            self.inflection_med,
            self.bif_angle_mean,
            self.bif_angle_med,
            self.n_bifurcations.map(|n| n as f64),
        ]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        FEATURE_NAMES
            .iter()
            .position(|&n| n == name)
            .and_then(|i| self.values()[i])
    }

    /// Build from values in [`FEATURE_NAMES`] order.
    pub fn from_values(v: [Option<f64>; 12]) -> Self {
        Self {
            temporal_angle: v[0],
            cre: v[1],
            vascular_density: v[2],
            caliber_med: v[3],
            caliber_std: v[4],
            tortuosity_med: v[5],
            tortuosity_lw: v[6],
            curvature_med: v[7],
            inflection_med: v[8],
            bif_angle_mean: v[9],
            bif_angle_med: v[10],
            n_bifurcations: v[11].map(|n| n.round() as usize),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggMode {
    Med,
    Mean,
    Std,
    /// Length-weighted mean.
    Lw,
}

/// Reduce per-segment values; `lengths` is only read for [`AggMode::Lw`].
pub fn aggregate(values: &[f64], lengths: &[f64], mode: AggMode) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    match mode {
        AggMode::Med => vesselgeom::median(values),
        AggMode::Mean => Some(mean),
        AggMode::Std => Some((values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()),
        AggMode::Lw => {
            let total: f64 = lengths.iter().sum();
            (lengths.len() == values.len() && total > 0.0)
                .then(|| values.iter().zip(lengths).map(|(v, l)| v * l).sum::<f64>() / total)
        }
    }
}

/// `100 · Σ I·M / Σ M`.
pub fn vascular_density(mask: &LabelMask, roi: &LabelMask) -> Result<f64, FeatureError> {
    if mask.dims() != roi.dims() {
        return Err(FeatureError::DimensionMismatch {
            left: mask.dims(),
            right: roi.dims(),
        });
    }
    let (mut hit, mut area) = (0u64, 0u64);
    for (&v, &m) in mask.labels().iter().zip(roi.labels()) {
        if m != 0 {
            area += 1;
            hit += u64::from(v != 0);
        }
    }
    if area == 0 {
        return Err(FeatureError::EmptyRoi);
    }
    Ok(100.0 * hit as f64 / area as f64)
}

/// Revised Knudtson summary: each round pairs the largest remaining width
/// with the smallest as `k·√(a² + b²)`; with an odd count the median is
/// carried to the next round.
pub fn knudtson(widths: &[f64], k: f64) -> Option<f64> {
    if widths.len() < 2 {
        return None;
    }
    let mut v = widths.to_vec();
    while v.len() > 1 {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let mut next: Vec<f64> = (0..n / 2).map(|i| k * v[i].hypot(v[n - 1 - i])).collect();
        if n % 2 == 1 {
            next.push(v[n / 2]);
        }
        v = next;
    }
    Some(v[0])
}

/// Geometry of one graph edge.
#[derive(Debug, Clone)]
pub struct Segment {
    pub edge: usize,
    pub spline: Option<SegmentSpline>,
    /// Spline arc length, or chain length when no spline could be fit.
    pub length: f64,
    pub tortuosity: Option<f64>,
    pub curvature: Option<f64>,
    pub inflections: Option<usize>,
    pub caliber: Option<f64>,
}

/// Skeleton graph of one vessel class with per-segment measurements.
#[derive(Debug, Clone)]
pub struct ClassAnalysis {
    pub class: VesselClass,
    pub graph: VesselGraph,
    pub segments: Vec<Segment>,
}

fn masked(mask: &LabelMask, roi: Option<&LabelMask>) -> LabelMask {
    match roi {
        Some(r) => LabelMask::from_fn(mask.width(), mask.height(), |x, y| {
            mask.get(x, y) != 0 && r.get(x, y) != 0
        }),
        None => LabelMask::from_fn(mask.width(), mask.height(), |x, y| mask.get(x, y) != 0),
    }
}

pub fn analyze_class(mask: &LabelMask, class: VesselClass, region: &RegionSpec, cfg: &FeatureConfig) -> ClassAnalysis {
    let vessels = masked(mask, region.roi.as_ref());
    let mut graph = build_graph(&skeletonize(&vessels), cfg.prune_len);
    if let Some(d) = &region.disc {
        graph = orient_graph(graph, d.center);
    }
    let segments = graph
        .edges
        .iter()
        .map(|e| {
            let spline = fit_chain(&e.chain).ok();
            let open = !e.is_loop();
            let tort = match (cfg.tortuosity_source, &spline) {
                _ if !open => None,
                (TortuositySource::Spline, Some(s)) => tortuosity(&s.resample(1.0)),
                _ => tortuosity(&vesselgeom::chain_points(&e.chain)),
            };
            Segment {
                edge: e.id,
                length: spline.as_ref().map_or(e.length, |s| s.length()),
                tortuosity: tort,
                curvature: spline.as_ref().map(|s| mean_curvature(s) * cfg.curvature_scale),
                inflections: spline.as_ref().map(|s| inflection_count(s, cfg.inflection_eps)),
                caliber: spline
                    .as_ref()
                    .and_then(|s| measure_widths(s, &vessels, cfg.width_step).median),
                spline,
            }
        })
        .collect();
    ClassAnalysis { class, graph, segments }
}

impl ClassAnalysis {
    /// Spline of `edge` oriented away from `node`.
    fn spline_from(&self, edge: usize, node: usize) -> Option<SegmentSpline> {
        let e = &self.graph.edges[edge];
        let s = self.segments[edge].spline.as_ref()?;
        if e.is_loop() {
            return None;
        }
        Some(if e.a == node { s.clone() } else { s.reversed() })
    }

    fn counted_bifurcations(&self, region: &RegionSpec, cfg: &FeatureConfig) -> Vec<usize> {
        self.graph
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Bifurcation)
            .filter(|n| {
                !(cfg.exclude_disc_bifurcations && region.disc.as_ref().is_some_and(|d| d.contains(n.position())))
            })
            .map(|n| n.id)
            .collect()
    }

    /// Child edges of a bifurcation: from the orientation if present,
    /// otherwise the pair of incident edges enclosing the smallest angle.
    fn children(&self, node: usize, cfg: &BifAngleConfig) -> Option<[usize; 2]> {
        if let Some(o) = &self.graph.orientation {
            return match o.children[node].as_slice() {
                &[a, b] if o.parent_edge[node].is_some() => Some([a, b]),
                _ => None,
            };
        }
        let inc = self.graph.incidence()[node].clone();
        if inc.len() != 3 {
            return None;
        }
        let splines: Vec<Option<SegmentSpline>> = inc.iter().map(|&e| self.spline_from(e, node)).collect();
        let mut best: Option<(f64, [usize; 2])> = None;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let (Some(a), Some(b)) = (&splines[i], &splines[j]) else {
                continue;
            };
            if let Some(angle) = bifurcation_angle(a, b, cfg) {
                if best.is_none_or(|(x, _)| angle < x) {
                    best = Some((angle, [inc[i], inc[j]]));
                }
            }
        }
        best.map(|(_, pair)| pair)
    }

    pub fn bifurcation_angles(&self, region: &RegionSpec, cfg: &FeatureConfig) -> Vec<f64> {
        let bcfg = BifAngleConfig { delta: cfg.delta };
        self.counted_bifurcations(region, cfg)
            .into_iter()
            .filter_map(|n| {
                let [a, b] = self.children(n, &bcfg)?;
                bifurcation_angle(&self.spline_from(a, n)?, &self.spline_from(b, n)?, &bcfg)
            })
            .collect()
    }

    /// Local widths at every temporal-side crossing of the circle of radius
    /// `radius` around the disc center.
    pub fn circle_crossing_widths(
        &self,
        mask: &LabelMask,
        center: Keypoint,
        radius: f64,
        temporal: f64,
        window: f64,
        step: f64,
    ) -> Vec<f64> {
        let mut out = Vec::new();
        for seg in &self.segments {
            let Some(s) = &seg.spline else { continue };
            let dist = |a: f64| {
                let p = s.point_at_arc(a);
                (p.0 - center.x).hypot(p.1 - center.y) - radius
            };
            let samples = s.arc_samples(0.5);
            for w in samples.windows(2) {
                let (d0, d1) = (dist(w[0]), dist(w[1]));
                if (d0 < 0.0) == (d1 < 0.0) {
                    continue;
                }
                let a = w[0] + (w[1] - w[0]) * d0 / (d0 - d1);
                let p = s.point_at_arc(a);
                if (p.0 - center.x) * temporal <= 0.0 {
                    continue;
                }
                let n = (window / step).floor() as i64;
                let local: Vec<f64> = (-n..=n)
                    .map(|i| a + i as f64 * step)
                    .filter(|&x| (0.0..=s.length()).contains(&x))
                    .filter_map(|x| width_at(s, mask, x))
                    .collect();
                if let Some(m) = vesselgeom::median(&local) {
                    out.push(m);
                }
            }
        }
        out
    }
}

/// Root-to-leaf path through an oriented component.
#[derive(Debug, Clone)]
struct ArcadePath {
    points: Vec<Point>,
    weight: f64,
}

fn arcade_paths(a: &ClassAnalysis, disc: &Disc, cfg: &FeatureConfig) -> Vec<ArcadePath> {
    let Some(o) = &a.graph.orientation else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for &root in &o.roots {
        if a.graph.nodes[root].position().distance(disc.center) > cfg.arcade_root_radius * disc.radius {
            continue;
        }
        // Depth-first over child edges, carrying the path so far.
        let mut stack: Vec<(usize, Vec<Point>, f64)> = vec![(root, Vec::new(), 0.0)];
        while let Some((node, pts, weight)) = stack.pop() {
            let kids = &o.children[node];
            if kids.is_empty() {
                if !pts.is_empty() {
                    out.push(ArcadePath { points: pts, weight });
                }
                continue;
            }
            for &e in kids.iter().rev() {
                let edge = &a.graph.edges[e];
                let seg = &a.segments[e];
                let mut p = pts.clone();
                p.extend(edge.chain_from(node).into_iter().map(|(x, y)| (x as f64, y as f64)));
                let w = weight + seg.length * seg.caliber.unwrap_or(1.0);
                stack.push((edge.other(node), p, w));
            }
        }
    }
    out
}

fn mean_unit(points: &[Point], c: Keypoint) -> Option<Point> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0);
    for &(x, y) in points {
        let (dx, dy) = (x - c.x, y - c.y);
        let r = dx.hypot(dy);
        if r > 0.0 {
            sx += dx / r;
            sy += dy / r;
            n += 1;
        }
    }
    (n > 0 && sx.hypot(sy) > 0.0).then(|| (sx / n as f64, sy / n as f64))
}

/// Angle between the superior and inferior temporal arcades of one class.
pub fn temporal_angle(a: &ClassAnalysis, region: &RegionSpec, cfg: &FeatureConfig) -> Option<f64> {
    let disc = region.disc.as_ref()?;
    let temporal = region.temporal_sign(a.graph.width)?;
    let mut best: [Option<&ArcadePath>; 2] = [None, None];
    let paths = arcade_paths(a, disc, cfg);
    for p in &paths {
        let Some((ux, uy)) = mean_unit(&p.points, disc.center) else {
            continue;
        };
        if ux * temporal <= 0.0 || uy == 0.0 {
            continue;
        }
        // Image rows grow downward: superior is negative y.
        let half = usize::from(uy > 0.0);
        if best[half].is_none_or(|b| p.weight > b.weight) {
            best[half] = Some(p);
        }
    }
    let span = cfg.arcade_span * disc.radius;
    let direction = |p: &ArcadePath| {
        let mut arc = 0.0;
        let mut head = vec![p.points[0]];
        for w in p.points.windows(2) {
            arc += (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
            if arc > span {
                break;
            }
            head.push(w[1]);
        }
        mean_unit(&head, disc.center)
    };
    Some(angle_between(direction(best[0]?)?, direction(best[1]?)?))
}

/// CRE averaged over the configured measurement circles.
pub fn cre(a: &ClassAnalysis, mask: &LabelMask, region: &RegionSpec, cfg: &FeatureConfig) -> Option<f64> {
    let disc = region.disc.as_ref()?;
    let temporal = region.temporal_sign(mask.width())?;
    let vessels = masked(mask, region.roi.as_ref());
    let values: Vec<f64> = cfg
        .rho
        .iter()
        .filter_map(|rho| {
            let widths = a.circle_crossing_widths(
                &vessels,
                disc.center,
                rho * disc.radius,
                temporal,
                cfg.cre_window,
                cfg.width_step,
            );
            knudtson(&widths, a.class.knudtson_k())
        })
        .collect();
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// All features of one vessel class.
pub fn class_features(
    mask: &LabelMask,
    class: VesselClass,
    region: &RegionSpec,
    cfg: &FeatureConfig,
) -> Result<FeatureRecord, FeatureError> {
    cfg.validate()?;
    if let Some(r) = &region.roi {
        if r.dims() != mask.dims() {
            return Err(FeatureError::DimensionMismatch {
                left: mask.dims(),
                right: r.dims(),
            });
        }
    }
    let density = match &region.roi {
        Some(r) => vascular_density(mask, r)?,
        None => vascular_density(mask, &LabelMask::from_fn(mask.width(), mask.height(), |_, _| true))?,
    };
    let a = analyze_class(mask, class, region, cfg);
    let pick = |f: fn(&Segment) -> Option<f64>| -> (Vec<f64>, Vec<f64>) {
        a.segments.iter().filter_map(|s| f(s).map(|v| (v, s.length))).unzip()
    };
    let (cal, _) = pick(|s| s.caliber);
    let (tort, tort_len) = pick(|s| s.tortuosity);
    let (curv, _) = pick(|s| s.curvature);
    let (infl, _) = pick(|s| s.inflections.map(|n| n as f64));
    let angles = a.bifurcation_angles(region, cfg);
    Ok(FeatureRecord {
        temporal_angle: temporal_angle(&a, region, cfg),
        cre: cre(&a, mask, region, cfg),
        vascular_density: Some(density),
        caliber_med: aggregate(&cal, &[], AggMode::Med),
        caliber_std: aggregate(&cal, &[], AggMode::Std),
        tortuosity_med: aggregate(&tort, &[], AggMode::Med),
        tortuosity_lw: aggregate(&tort, &tort_len, AggMode::Lw),
        curvature_med: aggregate(&curv, &[], AggMode::Med),
        inflection_med: aggregate(&infl, &[], AggMode::Med),
        bif_angle_mean: aggregate(&angles, &[], AggMode::Mean),
        bif_angle_med: aggregate(&angles, &[], AggMode::Med),
        n_bifurcations: (!a.graph.edges.is_empty()).then(|| a.counted_bifurcations(region, cfg).len()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFeatures {
    pub artery: FeatureRecord,
    pub vein: FeatureRecord,
}

/// Features of both vessel classes of one image.
pub fn extract_features(
    artery: &LabelMask,
    vein: &LabelMask,
    region: &RegionSpec,
    cfg: &FeatureConfig,
) -> Result<ImageFeatures, FeatureError> {
    if artery.dims() != vein.dims() {
        return Err(FeatureError::DimensionMismatch {
            left: artery.dims(),
            right: vein.dims(),
        });
    }
    let (a, v) = rayon::join(
        || class_features(artery, VesselClass::Artery, region, cfg),
        || class_features(vein, VesselClass::Vein, region, cfg),
    );
    Ok(ImageFeatures { artery: a?, vein: v? })
}

pub fn csv_header() -> String {
    let mut s = String::from("image_id,class");
    for n in FEATURE_NAMES {
        s.push(',');
        s.push_str(n);
    }
    s
}

/// One CSV line; missing values are empty cells, reals use six decimals.
pub fn csv_row(image_id: &str, class: VesselClass, r: &FeatureRecord) -> String {
    let mut s = format!("{image_id},{class}");
    for (i, v) in r.values().iter().enumerate() {
        s.push(',');
        if let Some(v) = v {
            if FEATURE_NAMES[i] == "n_bifurcations" {
                let _ = write!(s, "{}", *v as u64);
            } else {
                let _ = write!(s, "{v:.6}");
            }
        }
    }
    s
}
