//! Fundus boundary detection, square crop/resize to the canonical frame and
//! mirror-padded high-pass contrast enhancement.
//!
//! Coordinates are pixel indices (pixel `(i, j)` is centered on `(i, j)`).
//! The geometric transform is a plain affine map `p' = (p - origin) * scale`
//! shared by images, masks and keypoints.

use std::collections::VecDeque;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Keypoint, LabelMask, RasterError, RgbImage};

/// Side of the normalized square frame.
pub const NORM_SIZE: usize = 1024;

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("no fundus found: {0}")]
    NoFundusFound(String),
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("mask is {actual:?} but transform expects a {expected:?} source frame")]
    FrameMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Fundus boundary: a circle optionally truncated by straight lines.
///
/// Cut values are the first (top/left) or last (bottom/right) row or column
/// still inside the fundus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
    pub cut_top: Option<f64>,
    pub cut_bottom: Option<f64>,
    pub cut_left: Option<f64>,
    pub cut_right: Option<f64>,
}

impl Bounds {
    pub fn circle(cx: f64, cy: f64, r: f64) -> Self {
        Self {
            cx,
            cy,
            r,
            cut_top: None,
            cut_bottom: None,
            cut_left: None,
            cut_right: None,
        }
    }

    pub fn validate(&self) -> Result<(), PrepError> {
        let bad = |m: String| Err(PrepError::InvalidBounds(m));
        if !(self.r > 0.0 && self.r.is_finite()) {
            return bad(format!("radius {} must be positive", self.r));
        }
        let (cx, cy, r) = (self.cx, self.cy, self.r);
        for (name, v, lo, hi) in [
            ("cut_top", self.cut_top, cy - r, cy + r),
            ("cut_bottom", self.cut_bottom, cy - r, cy + r),
            ("cut_left", self.cut_left, cx - r, cx + r),
            ("cut_right", self.cut_right, cx - r, cx + r),
        ] {
            if let Some(v) = v {
                if !(v > lo && v < hi) {
                    return bad(format!("{name}={v} does not intersect the circle"));
                }
            }
        }
        if let (Some(t), Some(b)) = (self.cut_top, self.cut_bottom) {
            if t >= b {
                return bad(format!("cut_top {t} must be above cut_bottom {b}"));
            }
        }
        if let (Some(l), Some(r)) = (self.cut_left, self.cut_right) {
            if l >= r {
                return bad(format!("cut_left {l} must be left of cut_right {r}"));
            }
        }
        Ok(())
    }

    /// Whether the pixel center `(x, y)` lies inside the fundus region.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        dx * dx + dy * dy <= self.r * self.r
            && self.cut_top.is_none_or(|t| y >= t)
            && self.cut_bottom.is_none_or(|b| y <= b)
            && self.cut_left.is_none_or(|l| x >= l)
            && self.cut_right.is_none_or(|r| x <= r)
    }

    /// Binary region-of-interest mask of the fundus in a `width`×`height` frame.
    pub fn roi_mask(&self, width: usize, height: usize) -> LabelMask {
        LabelMask::from_fn(width, height, |x, y| self.contains(x as f64, y as f64))
    }

    /// Visible extent `(x_lo, x_hi, y_lo, y_hi)` of the region.
    pub fn visible_box(&self) -> (f64, f64, f64, f64) {
        let (cx, cy, r) = (self.cx, self.cy, self.r);
        (
            self.cut_left.map_or(cx - r, |l| l.max(cx - r)),
            self.cut_right.map_or(cx + r, |v| v.min(cx + r)),
            self.cut_top.map_or(cy - r, |t| t.max(cy - r)),
            self.cut_bottom.map_or(cy + r, |b| b.min(cy + r)),
        )
    }

    /// These bounds expressed in the normalized frame of `t`.
    pub fn transformed(&self, t: &NormTransform) -> Bounds {
        let c = t.forward(Keypoint::new(self.cx, self.cy));
        Bounds {
            cx: c.x,
            cy: c.y,
            r: self.r * t.scale,
            cut_top: self.cut_top.map(|v| (v - t.y0) * t.scale),
            cut_bottom: self.cut_bottom.map(|v| (v - t.y0) * t.scale),
            cut_left: self.cut_left.map(|v| (v - t.x0) * t.scale),
            cut_right: self.cut_right.map(|v| (v - t.x0) * t.scale),
        }
    }
}

/// Crop-and-resize mapping from a source frame to the square normalized frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormTransform {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
    pub scale: f64,
    pub source_width: usize,
    pub source_height: usize,
    pub size: usize,
}

impl NormTransform {
    pub fn forward(&self, p: Keypoint) -> Keypoint {
        Keypoint::new((p.x - self.x0) * self.scale, (p.y - self.y0) * self.scale)
    }

    pub fn inverse(&self, p: Keypoint) -> Keypoint {
        Keypoint::new(p.x / self.scale + self.x0, p.y / self.scale + self.y0)
    }
}

/// Sidecar record written next to every prepared image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrepRecord {
    pub bounds: Bounds,
    pub transform: NormTransform,
    pub normalized_bounds: Bounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectParams {
    /// Lower limit for the Otsu threshold on `max(R, G, B)`.
    pub threshold_floor: u8,
    /// Minimum fraction of the frame the fundus must cover.
    pub min_area_fraction: f64,
    /// Maximum RMS circle-fit residual, as a fraction of the radius...
    pub max_residual_fraction: f64,
    /// ...but never below this many pixels.
    pub min_residual_px: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            threshold_floor: 10,
            min_area_fraction: 0.01,
            max_residual_fraction: 0.02,
            min_residual_px: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnhanceParams {
    /// Gaussian sigma is the normalized circle radius divided by this.
    pub sigma_divisor: f64,
    /// Gain applied to the high-pass residual.
    pub alpha: f64,
}

impl Default for EnhanceParams {
    fn default() -> Self {
        Self {
            sigma_divisor: 15.0,
            alpha: 4.0,
        }
    }
}

pub fn detect_bounds(image: &RgbImage) -> Result<Bounds, PrepError> {
    detect_bounds_with(image, &DetectParams::default())
}

/// Locate the illuminated fundus: threshold, keep the largest component,
/// find straight truncations, then fit a circle to the remaining boundary.
pub fn detect_bounds_with(image: &RgbImage, params: &DetectParams) -> Result<Bounds, PrepError> {
    let (w, h) = image.dims();
    let gray: Vec<u8> = image
        .as_raw()
        .chunks_exact(3)
        .map(|p| p[0].max(p[1]).max(p[2]))
        .collect();
    let t = otsu_threshold(&gray).max(params.threshold_floor);
    let fg: Vec<bool> = gray.iter().map(|&v| v > t).collect();
    let (mut region, area) = largest_component(&fg, w, h);
    if (area as f64) < params.min_area_fraction * (w * h) as f64 {
        return Err(PrepError::NoFundusFound(format!(
            "foreground covers {area} of {} pixels",
            w * h
        )));
    }
    fill_holes(&mut region, w, h);
    let inside = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && region[y as usize * w + x as usize]
    };

    let runs = FacingRuns::compute(&region, w, h);
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for (i, &v) in region.iter().enumerate() {
        if v {
            sx += (i % w) as f64;
            sy += (i / w) as f64;
            n += 1.0;
        }
    }
    let mut center = (sx / n, sy / n);
    let mut radius = (n / std::f64::consts::PI).sqrt();
    let mut cuts = [None; 4];
    let mut fit = None;

    for _ in 0..3 {
        let min_run = (3.5 * radius.sqrt()).max(8.0);
        cuts = runs.pick_cuts(center, min_run);
        let [top, bottom, left, right] = cuts;
        let mut pts = Vec::new();
        for y in 0..h {
            for x in 0..w {
                if !region[y * w + x] || x == 0 || y == 0 || x == w - 1 || y == h - 1 {
                    continue;
                }
                let (xi, yi) = (x as isize, y as isize);
                let on_edge = !inside(xi - 1, yi) || !inside(xi + 1, yi) || !inside(xi, yi - 1) || !inside(xi, yi + 1);
                if !on_edge {
                    continue;
                }
                let (xf, yf) = (x as f64, y as f64);
                let near_cut = top.is_some_and(|c| yf <= c + 2.0)
                    || bottom.is_some_and(|c| yf >= c - 2.0)
                    || left.is_some_and(|c| xf <= c + 2.0)
                    || right.is_some_and(|c| xf >= c - 2.0);
                if !near_cut {
                    pts.push((xf, yf));
                }
            }
        }
        if pts.len() < 16 {
            return Err(PrepError::NoFundusFound("too few circular boundary pixels".into()));
        }
        let f = fit_circle(&pts).ok_or_else(|| PrepError::NoFundusFound("degenerate circle fit".into()))?;
        center = (f.cx, f.cy);
        radius = f.r;
        fit = Some(f);
    }

    let f = fit.expect("loop runs at least once");
    let tol = params.min_residual_px.max(params.max_residual_fraction * f.r);
    if f.rms > tol {
        return Err(PrepError::NoFundusFound(format!(
            "circle fit residual {:.2} px exceeds {:.2} px",
            f.rms, tol
        )));
    }
    // Boundary pixel centers sit half a pixel inside the true edge.
    let r = f.r + 0.5;
    let [top, bottom, left, right] = cuts;
    let bounds = Bounds {
        cx: f.cx,
        cy: f.cy,
        r,
        cut_top: top.filter(|&v| v > f.cy - r + 1.0),
        cut_bottom: bottom.filter(|&v| v < f.cy + r - 1.0),
        cut_left: left.filter(|&v| v > f.cx - r + 1.0),
        cut_right: right.filter(|&v| v < f.cx + r - 1.0),
    };
    bounds.validate().map_err(|e| PrepError::NoFundusFound(e.to_string()))?;
    Ok(bounds)
}

fn otsu_threshold(gray: &[u8]) -> u8 {
    let mut hist = [0u64; 256];
    for &v in gray {
        hist[v as usize] += 1;
    }
    let total = gray.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_var) = (0u8, -1.0);
    for (t, &c) in hist.iter().enumerate() {
        w0 += c as f64;
        sum0 += t as f64 * c as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let var = w0 * w1 * (m0 - m1) * (m0 - m1);
        if var > best_var {
            best_var = var;
            best = t as u8;
        }
    }
    best
}

/// Largest 8-connected foreground component and its area.
fn largest_component(fg: &[bool], w: usize, h: usize) -> (Vec<bool>, usize) {
    let mut label = vec![0u32; w * h];
    let mut next = 0u32;
    let (mut best_label, mut best_area) = (0u32, 0usize);
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !fg[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        queue.push_back(start);
        let mut area = 0;
        while let Some(i) = queue.pop_front() {
            area += 1;
            let (x, y) = ((i % w) as isize, (i / w) as isize);
            for (dx, dy) in NEIGHBORS8 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if fg[j] && label[j] == 0 {
                    label[j] = next;
                    queue.push_back(j);
                }
            }
        }
        if area > best_area {
            best_area = area;
            best_label = next;
        }
    }
    let region = label.iter().map(|&l| l != 0 && l == best_label).collect();
    (region, best_area)
}

/// Set every background pixel not 4-reachable from the frame border.
fn fill_holes(region: &mut [bool], w: usize, h: usize) {
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            if (x == 0 || y == 0 || x == w - 1 || y == h - 1) && !region[y * w + x] {
                outside[y * w + x] = true;
                queue.push_back(y * w + x);
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            if !region[j] && !outside[j] {
                outside[j] = true;
                queue.push_back(j);
            }
        }
    }
    for (r, o) in region.iter_mut().zip(outside) {
        *r = !o;
    }
}

const NEIGHBORS8: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

/// Longest run of boundary pixels facing each direction, per row or column.
struct FacingRuns {
    /// Indexed by row: pixels whose upper neighbor is outside.
    top: Vec<usize>,
    bottom: Vec<usize>,
    /// Indexed by column.
    left: Vec<usize>,
    right: Vec<usize>,
}

impl FacingRuns {
    fn compute(region: &[bool], w: usize, h: usize) -> Self {
        let at = |x: usize, y: usize| region[y * w + x];
        let longest = |n: usize, facing: &dyn Fn(usize) -> bool| {
            let (mut best, mut cur) = (0, 0);
            for i in 0..n {
                if facing(i) {
                    cur += 1;
                    best = best.max(cur);
                } else {
                    cur = 0;
                }
            }
            best
        };
        let top = (0..h)
            .map(|y| longest(w, &|x| at(x, y) && (y == 0 || !at(x, y - 1))))
            .collect();
        let bottom = (0..h)
            .map(|y| longest(w, &|x| at(x, y) && (y + 1 == h || !at(x, y + 1))))
            .collect();
        let left = (0..w)
            .map(|x| longest(h, &|y| at(x, y) && (x == 0 || !at(x - 1, y))))
            .collect();
        let right = (0..w)
            .map(|x| longest(h, &|y| at(x, y) && (x + 1 == w || !at(x + 1, y))))
            .collect();
        Self {
            top,
            bottom,
            left,
            right,
        }
    }

    /// `[top, bottom, left, right]` cut lines: the row/column with the longest
    /// qualifying straight run on the matching side of `center`.
    fn pick_cuts(&self, center: (f64, f64), min_run: f64) -> [Option<f64>; 4] {
        let pick = |runs: &[usize], keep: &dyn Fn(f64) -> bool| {
            let mut best: Option<(usize, usize)> = None;
            for (i, &len) in runs.iter().enumerate() {
                if (len as f64) < min_run || !keep(i as f64) {
                    continue;
                }
                if best.is_none_or(|(_, l)| len > l) {
                    best = Some((i, len));
                }
            }
            best.map(|(i, _)| i as f64)
        };
        [
            pick(&self.top, &|y| y < center.1),
            pick(&self.bottom, &|y| y > center.1),
            pick(&self.left, &|x| x < center.0),
            pick(&self.right, &|x| x > center.0),
        ]
    }
}

struct CircleFit {
    cx: f64,
    cy: f64,
    r: f64,
    rms: f64,
}

/// Algebraic (Kasa) fit refined by Gauss-Newton on geometric distance.
fn fit_circle(pts: &[(f64, f64)]) -> Option<CircleFit> {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for &(x, y) in pts {
        let (u, v) = (x - mx, y - my);
        let row = Vector3::new(u, v, 1.0);
        ata += row * row.transpose();
        atb += row * -(u * u + v * v);
    }
    let sol = ata.lu().solve(&atb)?;
    let (mut a, mut b) = (-sol[0] / 2.0, -sol[1] / 2.0);
    let r2 = a * a + b * b - sol[2];
    if r2.is_nan() || r2 <= 0.0 {
        return None;
    }
    let mut r = r2.sqrt();
    for _ in 0..10 {
        let mut jtj = Matrix3::zeros();
        let mut jtr = Vector3::zeros();
        for &(x, y) in pts {
            let (u, v) = (x - mx - a, y - my - b);
            let d = (u * u + v * v).sqrt().max(1e-9);
            let j = Vector3::new(-u / d, -v / d, -1.0);
            jtj += j * j.transpose();
            jtr += j * (d - r);
        }
        let step = jtj.lu().solve(&-jtr)?;
        a += step[0];
        b += step[1];
        r += step[2];
        if step.norm() < 1e-9 {
            break;
        }
    }
    let ss: f64 = pts
        .iter()
        .map(|&(x, y)| {
            let d = (x - mx - a).hypot(y - my - b) - r;
            d * d
        })
        .sum();
    Some(CircleFit {
        cx: a + mx,
        cy: b + my,
        r,
        rms: (ss / n).sqrt(),
    })
}

/// Crop square for `bounds`: the circle's bounding square, unless the cut
/// lines remove more than a quarter of the diameter, in which case the square
/// tightly covers the visible region.
pub fn crop_square(bounds: &Bounds) -> (f64, f64, f64) {
    let (xl, xh, yl, yh) = bounds.visible_box();
    let diam = 2.0 * bounds.r;
    let removed = ((diam - (xh - xl)) / diam).max((diam - (yh - yl)) / diam);
    if removed > 0.25 {
        let side = (xh - xl).max(yh - yl);
        ((xl + xh - side) / 2.0, (yl + yh - side) / 2.0, side)
    } else {
        (bounds.cx - bounds.r, bounds.cy - bounds.r, diam)
    }
}

pub fn norm_transform(bounds: &Bounds, source_width: usize, source_height: usize) -> NormTransform {
    let (x0, y0, side) = crop_square(bounds);
    NormTransform {
        x0,
        y0,
        side,
        scale: NORM_SIZE as f64 / side,
        source_width,
        source_height,
        size: NORM_SIZE,
    }
}

/// Crop the fundus square and resize it bilinearly to `NORM_SIZE`².
/// Samples outside the source frame are black.
pub fn normalize(image: &RgbImage, bounds: &Bounds) -> Result<(RgbImage, NormTransform), PrepError> {
    bounds.validate()?;
    let (w, h) = image.dims();
    let t = norm_transform(bounds, w, h);
    let n = t.size;
    let src = image.as_raw();
    let px = |x: isize, y: isize, c: usize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            f64::from(src[(y as usize * w + x as usize) * 3 + c])
        }
    };
    let mut out = vec![0u8; n * n * 3];
    for v in 0..n {
        let sy = t.y0 + v as f64 / t.scale;
        let y0 = sy.floor();
        let fy = sy - y0;
        for u in 0..n {
            let sx = t.x0 + u as f64 / t.scale;
            let x0 = sx.floor();
            let fx = sx - x0;
            let (xi, yi) = (x0 as isize, y0 as isize);
            for c in 0..3 {
                let top = px(xi, yi, c) * (1.0 - fx) + px(xi + 1, yi, c) * fx;
                let bot = px(xi, yi + 1, c) * (1.0 - fx) + px(xi + 1, yi + 1, c) * fx;
                let val = top * (1.0 - fy) + bot * fy;
                out[(v * n + u) * 3 + c] = val.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    Ok((RgbImage::new(n, n, out)?, t))
}

/// Nearest-neighbor resampling of a label mask into the normalized frame.
pub fn transform_mask(mask: &LabelMask, t: &NormTransform) -> Result<LabelMask, PrepError> {
    if mask.dims() != (t.source_width, t.source_height) {
        return Err(PrepError::FrameMismatch {
            expected: (t.source_width, t.source_height),
            actual: mask.dims(),
        });
    }
    let (w, h) = mask.dims();
    let n = t.size;
    let mut labels = vec![0u8; n * n];
    for v in 0..n {
        let sy = (t.y0 + v as f64 / t.scale).round();
        if sy < 0.0 || sy >= h as f64 {
            continue;
        }
        for u in 0..n {
            let sx = (t.x0 + u as f64 / t.scale).round();
            if sx >= 0.0 && sx < w as f64 {
                labels[v * n + u] = mask.get(sx as usize, sy as usize);
            }
        }
    }
    Ok(LabelMask::new(n, n, mask.scheme(), labels)?)
}

pub fn transform_point(p: Keypoint, t: &NormTransform) -> Keypoint {
    t.forward(p)
}

/// Normalized image, enhanced image and sidecar record of one photograph.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub normalized: RgbImage,
    pub enhanced: RgbImage,
    pub record: PrepRecord,
}

/// Detect bounds, normalize and enhance.
pub fn prepare(image: &RgbImage, detect: &DetectParams, params: &EnhanceParams) -> Result<Prepared, PrepError> {
    let bounds = detect_bounds_with(image, detect)?;
    let (normalized, transform) = normalize(image, &bounds)?;
    let normalized_bounds = bounds.transformed(&transform);
    let enhanced = enhance(&normalized, &normalized_bounds, params);
    Ok(Prepared {
        normalized,
        enhanced,
        record: PrepRecord {
            bounds,
            transform,
            normalized_bounds,
        },
    })
}

/// High-pass contrast enhancement inside the fundus region of a normalized
/// image. The image is mirrored across the region boundary before blurring so
/// the border does not produce a halo; everything outside the region is 0.
pub fn enhance(image: &RgbImage, bounds: &Bounds, params: &EnhanceParams) -> RgbImage {
    let (w, h) = image.dims();
    let sigma = (bounds.r / params.sigma_divisor).max(0.5);
    let src = image.as_raw();
    let mut sources = Vec::with_capacity(w * h);
    let mut inside = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let is_in = bounds.contains(x as f64, y as f64);
            inside.push(is_in);
            sources.push(if is_in {
                y * w + x
            } else {
                mirror_source(bounds, x as f64, y as f64, w, h)
            });
        }
    }
    let mut out = vec![0u8; w * h * 3];
    for c in 0..3 {
        let plane: Vec<f32> = sources.iter().map(|&i| f32::from(src[i * 3 + c])).collect();
        let blurred = gaussian_blur(&plane, w, h, sigma);
        for i in 0..w * h {
            if inside[i] {
                let v = params.alpha as f32 * (plane[i] - blurred[i]) + 128.0;
                out[i * 3 + c] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    RgbImage::new(w, h, out).expect("same dimensions as input")
}

/// Pixel index inside the region that mirrors `(x, y)` across the nearest
/// boundary (cut lines first, then the circle).
fn mirror_source(b: &Bounds, mut x: f64, mut y: f64, w: usize, h: usize) -> usize {
    for _ in 0..4 {
        if let Some(t) = b.cut_top.filter(|&t| y < t) {
            y = 2.0 * t - y;
        }
        if let Some(v) = b.cut_bottom.filter(|&v| y > v) {
            y = 2.0 * v - y;
        }
        if let Some(l) = b.cut_left.filter(|&l| x < l) {
            x = 2.0 * l - x;
        }
        if let Some(r) = b.cut_right.filter(|&r| x > r) {
            x = 2.0 * r - x;
        }
        let (dx, dy) = (x - b.cx, y - b.cy);
        let d = dx.hypot(dy);
        if d > b.r {
            let k = ((2.0 * b.r - d) / d).max(0.0);
            x = b.cx + dx * k;
            y = b.cy + dy * k;
        }
        if b.contains(x.round(), y.round()) {
            break;
        }
    }
    if !b.contains(x.round(), y.round()) {
        // Pull toward the center until inside.
        let (dx, dy) = (x - b.cx, y - b.cy);
        let d = dx.hypot(dy).max(1e-9);
        let mut k = ((b.r - 1.0) / d).min(1.0);
        while k > 0.0 && !b.contains((b.cx + dx * k).round(), (b.cy + dy * k).round()) {
            k -= 0.05;
        }
        x = b.cx + dx * k.max(0.0);
        y = b.cy + dy * k.max(0.0);
    }
    let xi = (x.round().max(0.0) as usize).min(w - 1);
    let yi = (y.round().max(0.0) as usize).min(h - 1);
    yi * w + xi
}

/// Gaussian blur approximated by three successive box filters whose widths
/// match the target variance. Edges are reflected.
pub fn gaussian_blur(plane: &[f32], w: usize, h: usize, sigma: f64) -> Vec<f32> {
    let mut cur = plane.to_vec();
    let mut tmp = vec![0.0f32; w * h];
    for size in box_sizes(sigma, 3) {
        let radius = (size - 1) / 2;
        for y in 0..h {
            box_line(&cur[y * w..(y + 1) * w], &mut tmp[y * w..(y + 1) * w], radius);
        }
        let mut col = vec![0.0f32; h];
        let mut col_out = vec![0.0f32; h];
        for x in 0..w {
            for y in 0..h {
                col[y] = tmp[y * w + x];
            }
            box_line(&col, &mut col_out, radius);
            for y in 0..h {
                cur[y * w + x] = col_out[y];
            }
        }
    }
    cur
}

fn box_sizes(sigma: f64, n: usize) -> Vec<usize> {
    let nf = n as f64;
    let ideal = (12.0 * sigma * sigma / nf + 1.0).sqrt();
    let mut wl = ideal.floor() as usize;
    if wl.is_multiple_of(2) {
        wl = wl.saturating_sub(1).max(1);
    }
    let wu = wl + 2;
    let wlf = wl as f64;
    let m = ((12.0 * sigma * sigma - nf * wlf * wlf - 4.0 * nf * wlf - 3.0 * nf) / (-4.0 * wlf - 4.0))
        .round()
        .clamp(0.0, nf) as usize;
    (0..n).map(|i| if i < m { wl } else { wu }).collect()
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let mut k = i.rem_euclid(period);
    if k >= n {
        k = period - 1 - k;
    }
    k as usize
}

fn box_line(src: &[f32], dst: &mut [f32], radius: usize) {
    let n = src.len();
    let r = radius as isize;
    let norm = 1.0 / (2 * radius + 1) as f64;
    let mut acc: f64 = (-r..=r).map(|i| f64::from(src[reflect(i, n)])).sum();
    for (i, d) in dst.iter_mut().enumerate() {
        *d = (acc * norm) as f32;
        let i = i as isize;
        acc += f64::from(src[reflect(i + r + 1, n)]) - f64::from(src[reflect(i - r, n)]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::LabelScheme;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn disk_image(w: usize, h: usize, cx: f64, cy: f64, r: f64, rows: (f64, f64)) -> RgbImage {
        let mut img = RgbImage::filled(w, h, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let yf = y as f64;
                if dx * dx + dy * dy <= r * r && yf >= rows.0 && yf <= rows.1 {
                    img.set(x, y, [170, 90, 40]);
                }
            }
        }
        img
    }

    #[test]
    fn detects_centered_disk() {
        let img = disk_image(1000, 1000, 500.0, 500.0, 450.0, (0.0, 1e9));
        let b = detect_bounds(&img).unwrap();
        assert!((b.cx - 500.0).abs() < 2.0, "{b:?}");
        assert!((b.cy - 500.0).abs() < 2.0, "{b:?}");
        assert!((b.r - 450.0).abs() < 2.0, "{b:?}");
        assert_eq!(b.cut_top, None);
        assert_eq!(b.cut_bottom, None);
    }

    #[test]
    fn detects_top_and_bottom_cuts() {
        let img = disk_image(1000, 1000, 500.0, 500.0, 450.0, (100.0, 900.0));
        let b = detect_bounds(&img).unwrap();
        assert!((b.r - 450.0).abs() < 2.0, "{b:?}");
        assert!((b.cut_top.unwrap() - 100.0).abs() < 2.0, "{b:?}");
        assert!((b.cut_bottom.unwrap() - 900.0).abs() < 2.0, "{b:?}");
        assert!(b.cut_left.is_none() && b.cut_right.is_none());
    }

    #[test]
    fn tangent_cuts_are_equivalent_to_none() {
        // Blacking out rows outside [50, 950] of a disk spanning exactly those
        // rows removes at most its tangent pixels.
        let img = disk_image(1000, 1000, 500.0, 500.0, 450.0, (50.0, 950.0));
        let b = detect_bounds(&img).unwrap();
        for c in [b.cut_top, b.cut_bottom].into_iter().flatten() {
            assert!((c - 50.0).abs() < 2.0 || (c - 950.0).abs() < 2.0, "{b:?}");
        }
        let (_, _, yl, yh) = b.visible_box();
        assert!((yl - 50.0).abs() < 2.0 && (yh - 950.0).abs() < 2.0, "{b:?}");
    }

    #[test]
    fn all_black_is_rejected() {
        let img = RgbImage::filled(200, 150, [0, 0, 0]);
        assert!(matches!(detect_bounds(&img), Err(PrepError::NoFundusFound(_))));
    }

    #[test]
    fn square_is_not_a_fundus() {
        let mut img = RgbImage::filled(300, 300, [0, 0, 0]);
        for y in 50..250 {
            for x in 50..250 {
                img.set(x, y, [200, 200, 200]);
            }
        }
        assert!(detect_bounds(&img).is_err());
    }

    #[test]
    fn translation_equivariance() {
        let a = detect_bounds(&disk_image(600, 600, 300.0, 300.0, 200.0, (0.0, 1e9))).unwrap();
        let b = detect_bounds(&disk_image(600, 600, 337.0, 281.0, 200.0, (0.0, 1e9))).unwrap();
        assert!((b.cx - a.cx - 37.0).abs() < 2.0);
        assert!((b.cy - a.cy + 19.0).abs() < 2.0);
    }

    #[test]
    fn identity_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<u8> = (0..1024 * 1024 * 3).map(|_| rng.random()).collect();
        let img = RgbImage::new(1024, 1024, data).unwrap();
        let (out, t) = normalize(&img, &Bounds::circle(512.0, 512.0, 512.0)).unwrap();
        assert_eq!(t.scale, 1.0);
        assert_eq!((t.x0, t.y0), (0.0, 0.0));
        assert!(out == img);
    }

    #[test]
    fn normalization_scale_and_point_map() {
        let img = disk_image(1000, 1000, 500.0, 500.0, 450.0, (0.0, 1e9));
        let (out, t) = normalize(&img, &Bounds::circle(500.0, 500.0, 450.0)).unwrap();
        assert_eq!(out.dims(), (1024, 1024));
        assert!((t.side - 900.0).abs() < 1e-12);
        assert!((t.scale - 1024.0 / 900.0).abs() < 1e-12);
        assert_eq!((t.x0, t.y0), (50.0, 50.0));
        let p = transform_point(Keypoint::new(500.0, 500.0), &t);
        assert!((p.x - 512.0).abs() < 1e-9 && (p.y - 512.0).abs() < 1e-9);
    }

    #[test]
    fn forward_inverse_round_trip() {
        let b = Bounds::circle(611.3, 480.2, 455.7);
        let t = norm_transform(&b, 1300, 1000);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let p = Keypoint::new(rng.random_range(0.0..1300.0), rng.random_range(0.0..1000.0));
            worst = worst.max(t.inverse(t.forward(p)).distance(p));
        }
        assert!(worst < 0.5);
    }

    #[test]
    fn heavy_cuts_shrink_the_square() {
        let b = Bounds {
            cut_top: Some(300.0),
            cut_bottom: Some(700.0),
            ..Bounds::circle(500.0, 500.0, 450.0)
        };
        let (x0, y0, side) = crop_square(&b);
        assert!((side - 900.0).abs() < 1e-9, "width still spans the diameter");
        assert!((y0 - 50.0).abs() < 1e-9 && (x0 - 50.0).abs() < 1e-9);
        let slight = Bounds {
            cut_top: Some(120.0),
            ..Bounds::circle(500.0, 500.0, 450.0)
        };
        assert_eq!(crop_square(&slight), (50.0, 50.0, 900.0));
    }

    #[test]
    fn identity_mask_transform() {
        let m = LabelMask::new(
            1024,
            1024,
            LabelScheme::Av4,
            (0..1024 * 1024).map(|i| (i % 7 % 4) as u8).collect(),
        )
        .unwrap();
        let t = norm_transform(&Bounds::circle(512.0, 512.0, 512.0), 1024, 1024);
        assert_eq!(transform_mask(&m, &t).unwrap(), m);
    }

    #[test]
    fn upscaled_mask_invents_no_labels() {
        let m = LabelMask::new(
            512,
            512,
            LabelScheme::Av4,
            (0..512 * 512).map(|i| if i % 3 == 0 { 2 } else { 0 }).collect(),
        )
        .unwrap();
        let t = norm_transform(&Bounds::circle(256.0, 256.0, 256.0), 512, 512);
        assert!((t.scale - 2.0).abs() < 1e-12);
        let out = transform_mask(&m, &t).unwrap();
        assert!(out.labels().iter().all(|&v| v == 0 || v == 2));
        let wrong = LabelMask::zeros(10, 10, LabelScheme::Binary);
        assert!(matches!(
            transform_mask(&wrong, &t),
            Err(PrepError::FrameMismatch { .. })
        ));
    }

    #[test]
    fn enhance_constant_is_flat_128() {
        let b = Bounds {
            cut_top: Some(100.0),
            ..Bounds::circle(512.0, 512.0, 500.0)
        };
        let img = RgbImage::filled(1024, 1024, [150, 60, 20]);
        let out = enhance(&img, &b, &EnhanceParams::default());
        for y in 0..1024 {
            for x in 0..1024 {
                let px = out.get(x, y);
                if b.contains(x as f64, y as f64) {
                    for v in px {
                        assert!((i32::from(v) - 128).abs() <= 1, "({x},{y}) {px:?}");
                    }
                } else {
                    assert_eq!(px, [0, 0, 0]);
                }
            }
        }
    }

    #[test]
    fn enhance_checkerboard_mean_is_128() {
        let b = Bounds::circle(512.0, 512.0, 480.0);
        let mut img = RgbImage::filled(1024, 1024, [0, 0, 0]);
        for y in 0..1024 {
            for x in 0..1024 {
                if ((x / 8) + (y / 8)) % 2 == 0 {
                    img.set(x, y, [200, 120, 60]);
                } else {
                    img.set(x, y, [100, 80, 40]);
                }
            }
        }
        let out = enhance(&img, &b, &EnhanceParams::default());
        let (mut sum, mut n) = ([0.0f64; 3], 0.0);
        for y in 0..1024 {
            for x in 0..1024 {
                if b.contains(x as f64, y as f64) {
                    let p = out.get(x, y);
                    for c in 0..3 {
                        sum[c] += f64::from(p[c]);
                    }
                    n += 1.0;
                }
            }
        }
        for s in sum {
            assert!((s / n - 128.0).abs() <= 2.0, "mean {}", s / n);
        }
    }

    #[test]
    fn enhance_is_idempotent_from_zero() {
        let b = Bounds::circle(512.0, 512.0, 500.0);
        let img = RgbImage::filled(1024, 1024, [0, 0, 0]);
        let once = enhance(&img, &b, &EnhanceParams::default());
        let twice = enhance(&once, &b, &EnhanceParams::default());
        assert!(once == twice);
        for y in 0..1024 {
            for x in 0..1024 {
                if !b.contains(x as f64, y as f64) {
                    assert_eq!(once.get(x, y), [0, 0, 0]);
                }
            }
        }
    }

    #[test]
    fn box_blur_preserves_mean_and_matches_sigma() {
        for sigma in [3.0, 5.0, 34.0] {
            let sizes = box_sizes(sigma, 3);
            let var: f64 = sizes.iter().map(|&s| ((s * s) as f64 - 1.0) / 12.0).sum();
            assert!((var.sqrt() - sigma).abs() / sigma < 0.1, "{sigma} {sizes:?}");
        }
        let plane: Vec<f32> = (0..64 * 32).map(|i| (i % 17) as f32).collect();
        let out = gaussian_blur(&plane, 64, 32, 3.0);
        let m0: f32 = plane.iter().sum::<f32>() / plane.len() as f32;
        let m1: f32 = out.iter().sum::<f32>() / out.len() as f32;
        assert!((m0 - m1).abs() < 0.2);
    }
}
