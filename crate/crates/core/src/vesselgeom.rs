//! Per-segment geometry on least-squares cubic B-splines: arc length,
//! tortuosity, curvature, inflections, ray-cast widths and branch angles.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::LabelMask;
use crate::vesselgraph::Pixel;

/// `(x, y)` in pixel coordinates.
pub type Point = (f64, f64);

#[derive(Debug, Error, PartialEq)]
pub enum GeomError {
    #[error("segment has {0} points, at least {MIN_POINTS} required")]
    TooShort(usize),
    #[error("segment points all coincide")]
    Degenerate,
}

pub const MIN_POINTS: usize = 5;

/// Knot spacings tried from smoothest to finest.
const KNOT_SPACINGS: [f64; 7] = [40.0, 30.0, 20.0, 15.0, 10.0, 7.0, 5.0];
/// Parameter step of the arc-length table.
const ARC_TABLE_STEP: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
struct BSpline {
    degree: usize,
    knots: Vec<f64>,
    coefs: Vec<[f64; 2]>,
}

impl BSpline {
    fn span(&self, u: f64) -> usize {
        let n = self.coefs.len();
        let p = self.degree;
        if u >= self.knots[n] {
            return n - 1;
        }
        let mut k = p;
        while k < n - 1 && self.knots[k + 1] <= u {
            k += 1;
        }
        k
    }

    /// Nonzero basis functions at `u`: `N[k-p..=k]`.
    fn basis(&self, k: usize, u: f64) -> Vec<f64> {
        let p = self.degree;
        let mut n = vec![0.0; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        n[0] = 1.0;
        for j in 1..=p {
            left[j] = u - self.knots[k + 1 - j];
            right[j] = self.knots[k + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    fn eval(&self, u: f64) -> Point {
        let k = self.span(u);
        let n = self.basis(k, u);
        let mut x = 0.0;
        let mut y = 0.0;
        for (r, b) in n.iter().enumerate() {
            let c = self.coefs[k - self.degree + r];
            x += b * c[0];
            y += b * c[1];
        }
        (x, y)
    }

    fn derivative(&self) -> BSpline {
        let p = self.degree;
        let coefs = self
            .coefs
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let d = self.knots[i + p + 1] - self.knots[i + 1];
                if d == 0.0 {
                    [0.0, 0.0]
                } else {
                    let s = p as f64 / d;
                    [s * (w[1][0] - w[0][0]), s * (w[1][1] - w[0][1])]
                }
            })
            .collect();
        BSpline {
            degree: p - 1,
            knots: self.knots[1..self.knots.len() - 1].to_vec(),
            coefs,
        }
    }
}

fn clamped_knots(span: f64, intervals: usize) -> Vec<f64> {
    let mut k = vec![0.0; 4];
    k.extend((1..intervals).map(|j| span * j as f64 / intervals as f64));
    k.extend([span; 4]);
    k
}

fn least_squares(params: &[f64], points: &[Point], knots: Vec<f64>) -> Option<BSpline> {
    let ncp = knots.len() - 4;
    let mut spline = BSpline {
        degree: 3,
        knots,
        coefs: vec![[0.0; 2]; ncp],
    };
    let mut ata = DMatrix::<f64>::zeros(ncp, ncp);
    let mut atx = DVector::<f64>::zeros(ncp);
    let mut aty = DVector::<f64>::zeros(ncp);
    for (&u, &(x, y)) in params.iter().zip(points) {
        let k = spline.span(u);
        let b = spline.basis(k, u);
        let base = k - 3;
        for r in 0..4 {
            atx[base + r] += b[r] * x;
            aty[base + r] += b[r] * y;
            for c in 0..4 {
                ata[(base + r, base + c)] += b[r] * b[c];
            }
        }
    }
    let ridge = 1e-10 * ata.diagonal().max().max(1e-300);
    for i in 0..ncp {
        ata[(i, i)] += ridge;
    }
    let chol = ata.cholesky()?;
    let cx = chol.solve(&atx);
    let cy = chol.solve(&aty);
    spline.coefs = (0..ncp).map(|i| [cx[i], cy[i]]).collect();
    Some(spline)
}

/// Smooth parametrization of one vessel segment. The public parameter
/// `t ∈ [0, 1]` is proportional to chord length along the input points.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSpline {
    pos: BSpline,
    d1: BSpline,
    d2: BSpline,
    span: f64,
    /// Cumulative arc length at `u = i · ARC_TABLE_STEP` (last entry at `span`).
    arc: Vec<f64>,
    max_deviation: f64,
    knot_spacing: f64,
}

impl SegmentSpline {
    /// Total arc length in px.
    pub fn length(&self) -> f64 {
        *self.arc.last().expect("nonempty table")
    }

    pub fn max_deviation(&self) -> f64 {
        self.max_deviation
    }

    pub fn knot_spacing(&self) -> f64 {
        self.knot_spacing
    }

    pub fn point(&self, t: f64) -> Point {
        self.pos.eval(t.clamp(0.0, 1.0) * self.span)
    }

    /// dγ/dt.
    pub fn d1(&self, t: f64) -> Point {
        let (x, y) = self.d1.eval(t.clamp(0.0, 1.0) * self.span);
        (x * self.span, y * self.span)
    }

    /// d²γ/dt².
    pub fn d2(&self, t: f64) -> Point {
        let (x, y) = self.d2.eval(t.clamp(0.0, 1.0) * self.span);
        let s2 = self.span * self.span;
        (x * s2, y * s2)
    }

    /// Signed curvature `(x′y″ − y′x″) / (x′² + y′²)^{3/2}`.
    pub fn signed_curvature(&self, t: f64) -> f64 {
        let (xp, yp) = self.d1(t);
        let (xpp, ypp) = self.d2(t);
        let speed2 = xp * xp + yp * yp;
        if speed2 == 0.0 {
            return 0.0;
        }
        (xp * ypp - yp * xpp) / speed2.powf(1.5)
    }

    pub fn curvature(&self, t: f64) -> f64 {
        self.signed_curvature(t).abs()
    }

    /// Parameter at arc length `s` from the start, clamped to the curve.
    pub fn param_at_arc(&self, s: f64) -> f64 {
        let s = s.clamp(0.0, self.length());
        let i = self.arc.partition_point(|&a| a < s);
        let u = if i == 0 {
            0.0
        } else {
            let (a0, a1) = (self.arc[i - 1], self.arc[i]);
            let u0 = (i - 1) as f64 * ARC_TABLE_STEP;
            let u1 = (i as f64 * ARC_TABLE_STEP).min(self.span);
            let f = if a1 > a0 { (s - a0) / (a1 - a0) } else { 0.0 };
            u0 + f * (u1 - u0)
        };
        u / self.span
    }

    pub fn point_at_arc(&self, s: f64) -> Point {
        self.point(self.param_at_arc(s))
    }

    /// Unit tangent at arc length `s`.
    pub fn tangent_at_arc(&self, s: f64) -> Point {
        let (x, y) = self.d1(self.param_at_arc(s));
        let n = x.hypot(y);
        if n == 0.0 {
            (0.0, 0.0)
        } else {
            (x / n, y / n)
        }
    }

    /// Arc positions `0, step, 2·step, …` up to the curve length.
    pub fn arc_samples(&self, step: f64) -> Vec<f64> {
        let n = (self.length() / step).floor() as usize;
        (0..=n).map(|i| i as f64 * step).collect()
    }

    /// Points every `step` px of arc, always including both ends.
    pub fn resample(&self, step: f64) -> Vec<Point> {
        let mut pts: Vec<Point> = self
            .arc_samples(step)
            .into_iter()
            .map(|s| self.point_at_arc(s))
            .collect();
        let last = self.point(1.0);
        if pts.last().is_none_or(|&p| p != last) {
            pts.push(last);
        }
        pts
    }

    /// The same curve traversed from the other end.
    pub fn reversed(&self) -> SegmentSpline {
        let mut pos = self.pos.clone();
        pos.coefs.reverse();
        pos.knots = pos.knots.iter().rev().map(|k| self.span - k).collect();
        build(pos, self.span, self.max_deviation, self.knot_spacing)
    }
}

fn build(pos: BSpline, span: f64, max_deviation: f64, knot_spacing: f64) -> SegmentSpline {
    let d1 = pos.derivative();
    let d2 = d1.derivative();
    let n = (span / ARC_TABLE_STEP).ceil() as usize;
    let mut arc = Vec::with_capacity(n + 1);
    arc.push(0.0);
    let mut prev = pos.eval(0.0);
    for i in 1..=n {
        let p = pos.eval((i as f64 * ARC_TABLE_STEP).min(span));
        let last = *arc.last().expect("seeded");
        arc.push(last + (p.0 - prev.0).hypot(p.1 - prev.1));
        prev = p;
    }
    SegmentSpline {
        pos,
        d1,
        d2,
        span,
        arc,
        max_deviation,
        knot_spacing,
    }
}

/// Least-squares cubic B-spline over chord length with uniform knots. The
/// coarsest spacing is kept whose fit stays within 1 px of every point and
/// whose RMS residual is close to that of the finest spacing, i.e. the
/// residual is noise rather than unfitted shape.
pub fn fit_spline(points: &[Point]) -> Result<SegmentSpline, GeomError> {
    if points.len() < MIN_POINTS {
        return Err(GeomError::TooShort(points.len()));
    }
    let mut params = Vec::with_capacity(points.len());
    let mut acc = 0.0;
    params.push(0.0);
    for w in points.windows(2) {
        acc += (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1);
        params.push(acc);
    }
    let span = acc;
    if span == 0.0 {
        return Err(GeomError::Degenerate);
    }

    let fit = |spacing: f64| -> Option<(BSpline, f64, f64)> {
        // Each interval must hold enough points for a stable solve.
        let intervals = ((span / spacing).ceil() as usize).min((points.len() - 1) / 2).max(1);
        let s = least_squares(&params, points, clamped_knots(span, intervals))?;
        let (mut max, mut sq) = (0.0f64, 0.0);
        for (&u, &(x, y)) in params.iter().zip(points) {
            let (px, py) = s.eval(u);
            let d = (px - x).hypot(py - y);
            max = max.max(d);
            sq += d * d;
        }
        Some((s, max, (sq / points.len() as f64).sqrt()))
    };
    // Generalized cross-validation over the candidate spacings.
    let m = points.len() as f64;
    let mut best: Option<(BSpline, f64, f64, f64)> = None;
    for spacing in KNOT_SPACINGS {
        let Some((s, max, rms)) = fit(spacing) else { continue };
        let dof = m - s.coefs.len() as f64;
        if dof <= 0.0 {
            continue;
        }
        let gcv = m * m * rms * rms / (dof * dof);
        if best.as_ref().is_none_or(|b| gcv < b.3) {
            best = Some((s, max, spacing, gcv));
        }
    }
    let (pos, dev, spacing, _) = best.ok_or(GeomError::Degenerate)?;
    Ok(build(pos, span, dev, spacing))
}

pub fn chain_points(chain: &[Pixel]) -> Vec<Point> {
    chain.iter().map(|&(x, y)| (x as f64, y as f64)).collect()
}

pub fn fit_chain(chain: &[Pixel]) -> Result<SegmentSpline, GeomError> {
    fit_spline(&chain_points(chain))
}

/// Arc over chord, `Σ‖pᵢ₊₁ − pᵢ‖ / ‖p_N − p₁‖`. `None` for fewer than two
/// points or coincident endpoints.
pub fn tortuosity(points: &[Point]) -> Option<f64> {
    let (first, last) = (points.first()?, points.last()?);
    let chord = (last.0 - first.0).hypot(last.1 - first.1);
    if points.len() < 2 || chord <= 1e-9 {
        return None;
    }
    let arc: f64 = points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1))
        .sum();
    Some(arc / chord)
}

/// Curvature sampling interval along the arc.
pub const CURVATURE_STEP: f64 = 5.0;

/// Mean |κ| over samples every 5 px of arc length.
pub fn mean_curvature(s: &SegmentSpline) -> f64 {
    let samples = s.arc_samples(CURVATURE_STEP);
    samples.iter().map(|&a| s.curvature(s.param_at_arc(a))).sum::<f64>() / samples.len() as f64
}

/// Sign changes of the signed curvature over the interior 5 px samples,
/// ignoring samples with `|κ| < eps`. End samples are left out: curvature at
/// a fitted curve's ends is poorly constrained.
pub fn inflection_count(s: &SegmentSpline, eps: f64) -> usize {
    let samples = s.arc_samples(CURVATURE_STEP);
    let interior = samples.get(1..samples.len().saturating_sub(1)).unwrap_or(&[]);
    let mut last: Option<bool> = None;
    let mut count = 0;
    for &a in interior {
        let k = s.signed_curvature(s.param_at_arc(a));
        if k.abs() < eps {
            continue;
        }
        let sign = k > 0.0;
        if last.is_some_and(|l| l != sign) {
            count += 1;
        }
        last = Some(sign);
    }
    count
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Widths {
    /// Width at each accepted sample, in arc order.
    pub samples: Vec<f64>,
    pub median: Option<f64>,
}

/// Ray march stride along the normal.
const RAY_STRIDE: f64 = 0.25;

fn inside(mask: &LabelMask, x: f64, y: f64) -> bool {
    mask.is_set(x.round() as isize, y.round() as isize)
}

/// Distance from `p` along `dir` to the first background sample.
pub fn ray_extent(mask: &LabelMask, p: Point, dir: Point) -> f64 {
    let limit = (mask.width() + mask.height()) as f64;
    let mut inner = 0.0;
    let mut d = RAY_STRIDE;
    while d < limit && inside(mask, p.0 + d * dir.0, p.1 + d * dir.1) {
        inner = d;
        d += RAY_STRIDE;
    }
    let mut outer = d;
    for _ in 0..12 {
        let mid = 0.5 * (inner + outer);
        if inside(mask, p.0 + mid * dir.0, p.1 + mid * dir.1) {
            inner = mid;
        } else {
            outer = mid;
        }
    }
    0.5 * (inner + outer)
}

/// Vessel width perpendicular to the curve at arc length `a`, or `None` if
/// the curve point is on background.
pub fn width_at(s: &SegmentSpline, mask: &LabelMask, a: f64) -> Option<f64> {
    let p = s.point_at_arc(a);
    if !inside(mask, p.0, p.1) {
        return None;
    }
    let (tx, ty) = s.tangent_at_arc(a);
    if tx == 0.0 && ty == 0.0 {
        return None;
    }
    let n = (-ty, tx);
    Some(ray_extent(mask, p, n) + ray_extent(mask, p, (-n.0, -n.1)))
}

/// Ray-cast widths every `step` px of arc and their median.
pub fn measure_widths(s: &SegmentSpline, mask: &LabelMask, step: f64) -> Widths {
    let samples: Vec<f64> = s
        .arc_samples(step)
        .into_iter()
        .filter_map(|a| width_at(s, mask, a))
        .collect();
    let median = median(&samples);
    Widths { samples, median }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BifAngleConfig {
    /// Arc distance from the branch point at which child directions are taken.
    pub delta: f64,
}

impl Default for BifAngleConfig {
    fn default() -> Self {
        Self { delta: 10.0 }
    }
}

/// Angle in degrees between two child branches, each oriented away from the
/// branch point. `None` if either child is shorter than `delta`.
///
/// The skeleton node of a thick bifurcation lies where the branches' inner
/// walls meet, past the geometric branch point, so each direction is taken
/// as the secant from arc `delta` to `2·delta`; this is the direction from
/// the branches' line intersection to the child point at `delta`. Children
/// shorter than `2·delta` use the node-to-`delta` direction instead.
pub fn bifurcation_angle(a: &SegmentSpline, b: &SegmentSpline, cfg: &BifAngleConfig) -> Option<f64> {
    let dir = |s: &SegmentSpline| {
        if s.length() < cfg.delta {
            return None;
        }
        let (p0, p1) = if s.length() >= 2.0 * cfg.delta {
            (s.point_at_arc(cfg.delta), s.point_at_arc(2.0 * cfg.delta))
        } else {
            (s.point(0.0), s.point_at_arc(cfg.delta))
        };
        Some((p1.0 - p0.0, p1.1 - p0.1))
    };
    Some(angle_between(dir(a)?, dir(b)?))
}

/// Angle in degrees between two vectors, in `[0, 180]`.
pub fn angle_between(d1: Point, d2: Point) -> f64 {
    let n = d1.0.hypot(d1.1) * d2.0.hypot(d2.1);
    if n == 0.0 {
        return 0.0;
    }
    ((d1.0 * d2.0 + d1.1 * d2.1) / n).clamp(-1.0, 1.0).acos().to_degrees()
}
