//! Synthetic fundus images and vessel masks with known geometry.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::raster::{Keypoint, LabelMask, LabelScheme, RgbImage};
use crate::vesselgeom::{tortuosity, Point};

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

/// Set every pixel whose center lies within `width / 2` of the polyline.
pub fn stamp_polyline(mask: &mut LabelMask, points: &[Point], width: f64) {
    let r = width / 2.0;
    let (w, h) = mask.dims();
    let pairs: Vec<(Point, Point)> = if points.len() == 1 {
        vec![(points[0], points[0])]
    } else {
        points.windows(2).map(|p| (p[0], p[1])).collect()
    };
    for (a, b) in pairs {
        let x0 = (a.0.min(b.0) - r).floor().max(0.0) as usize;
        let y0 = (a.1.min(b.1) - r).floor().max(0.0) as usize;
        let x1 = ((a.0.max(b.0) + r).ceil().max(0.0) as usize).min(w.saturating_sub(1));
        let y1 = ((a.1.max(b.1) + r).ceil().max(0.0) as usize).min(h.saturating_sub(1));
        for y in y0..=y1 {
            for x in x0..=x1 {
                if point_segment_distance((x as f64, y as f64), a, b) <= r {
                    mask.set(x, y, 1);
                }
            }
        }
    }
}

/// 1-px 8-connected line between pixel centers.
pub fn bresenham(mask: &mut LabelMask, from: (i64, i64), to: (i64, i64)) {
    let (mut x, mut y) = from;
    let dx = (to.0 - x).abs();
    let dy = -(to.1 - y).abs();
    let sx = if x < to.0 { 1 } else { -1 };
    let sy = if y < to.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x >= 0 && y >= 0 && (x as usize) < mask.width() && (y as usize) < mask.height() {
            mask.set(x as usize, y as usize, 1);
        }
        if (x, y) == to {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn unit(deg: f64) -> Point {
    let a = deg.to_radians();
    (a.cos(), a.sin())
}

/// Symmetric Y: a trunk rising from the bottom to the frame center, then two
/// children separated by `angle_deg`.
pub fn y_junction(size: usize, angle_deg: f64, width: f64, arm: f64) -> LabelMask {
    let c = (size as f64 / 2.0, size as f64 / 2.0);
    let mut m = LabelMask::zeros(size, size, LabelScheme::Binary);
    stamp_polyline(&mut m, &[(c.0, c.1 + arm), c], width);
    for sign in [-1.0, 1.0] {
        let d = unit(-90.0 + sign * angle_deg / 2.0);
        stamp_polyline(&mut m, &[c, (c.0 + arm * d.0, c.1 + arm * d.1)], width);
    }
    m
}

/// Two straight vessels crossing at the frame center.
pub fn x_crossing(size: usize, angle_deg: f64, width: f64, arm: f64) -> LabelMask {
    let c = (size as f64 / 2.0, size as f64 / 2.0);
    let mut m = LabelMask::zeros(size, size, LabelScheme::Binary);
    for deg in [0.0, angle_deg] {
        let d = unit(deg);
        stamp_polyline(
            &mut m,
            &[(c.0 - arm * d.0, c.1 - arm * d.1), (c.0 + arm * d.0, c.1 + arm * d.1)],
            width,
        );
    }
    m
}

/// Rotated bar of given width and length centered in the frame.
pub fn bar(size: usize, angle_deg: f64, width: f64, length: f64) -> LabelMask {
    let c = (size as f64 / 2.0, size as f64 / 2.0);
    let d = unit(angle_deg);
    let a = (c.0 - length / 2.0 * d.0, c.1 - length / 2.0 * d.1);
    // Square ends: keep pixels whose projection falls inside the bar.
    LabelMask::from_fn(size, size, |x, y| {
        let (px, py) = (x as f64 - a.0, y as f64 - a.1);
        let along = px * d.0 + py * d.1;
        let across = (-px * d.1 + py * d.0).abs();
        (0.0..=length).contains(&along) && across <= width / 2.0
    })
}

/// Skeleton-like tree drawn with 1-px lines.
#[derive(Debug, Clone)]
pub struct TreePhantom {
    pub mask: LabelMask,
    pub bifurcations: usize,
    pub segments: usize,
}

/// Random binary tree with `bifurcations` branch points laid out left to
/// right, plus one detached straight vessel. Segments total
/// `2·bifurcations + 2`.
pub fn random_tree(seed: u64, bifurcations: usize) -> TreePhantom {
    const DX: i64 = 16;
    const SLOT: f64 = 12.0;
    const MARGIN: i64 = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // children[i] is empty for leaves.
    let mut children: Vec<Vec<usize>> = vec![Vec::new()];
    let mut leaves = vec![0usize];
    for _ in 0..bifurcations {
        let i = leaves.swap_remove(rng.random_range(0..leaves.len()));
        let n = children.len();
        children[i] = vec![n, n + 1];
        children.push(Vec::new());
        children.push(Vec::new());
        leaves.extend([n, n + 1]);
    }
    let n = children.len();
    let mut depth = vec![0i64; n];
    let mut ypos = vec![0.0f64; n];
    let mut slot = 0usize;
    // Post-order: leaves take consecutive slots, parents sit midway.
    let mut stack = vec![(0usize, false)];
    while let Some((i, done)) = stack.pop() {
        if children[i].is_empty() {
            ypos[i] = slot as f64 * SLOT;
            slot += 1;
        } else if done {
            ypos[i] = (ypos[children[i][0]] + ypos[children[i][1]]) / 2.0;
        } else {
            stack.push((i, true));
            for &c in children[i].iter().rev() {
                depth[c] = depth[i] + 1;
                stack.push((c, false));
            }
        }
    }
    let max_depth = *depth.iter().max().unwrap_or(&0);
    let width = ((max_depth + 2) * DX + 2 * MARGIN) as usize;
    let height = ((slot as f64 - 1.0) * SLOT) as usize + 2 * MARGIN as usize + 40;
    let pos = |i: usize| (MARGIN + (depth[i] + 1) * DX, MARGIN + ypos[i].round() as i64);
    let mut mask = LabelMask::zeros(width, height, LabelScheme::Binary);
    let root = pos(0);
    bresenham(&mut mask, (MARGIN, root.1), root);
    for (i, kids) in children.iter().enumerate() {
        for &c in kids {
            bresenham(&mut mask, pos(i), pos(c));
        }
    }
    let y = height as i64 - 15;
    bresenham(&mut mask, (MARGIN, y), (MARGIN + 80, y));
    TreePhantom {
        mask,
        bifurcations,
        segments: 2 * bifurcations + 2,
    }
}

#[derive(Debug, Clone)]
pub struct EyeSpec {
    pub frame: usize,
    pub fundus_radius: f64,
    /// Disc center offset from the fundus center along the disc-fovea axis.
    pub disc_offset: f64,
    pub disc_radius: f64,
    pub fovea_offset: f64,
    /// Distance from the disc center at which trunks start.
    pub trunk_start: f64,
    pub trunk_length: f64,
    /// Arcade trunk angles from the disc-fovea axis.
    pub artery_angle: f64,
    pub vein_angle: f64,
    /// Child axes diverge from the trunk by this angle on either side.
    pub child_spread: f64,
    pub wave_amplitude: f64,
    pub wavelength: f64,
    pub wave_periods: usize,
    pub artery_width: f64,
    pub vein_width: f64,
}

impl Default for EyeSpec {
    fn default() -> Self {
        Self {
            frame: 1100,
            fundus_radius: 500.0,
            disc_offset: -220.0,
            disc_radius: 50.0,
            fovea_offset: 30.0,
            trunk_start: 25.0,
            trunk_length: 200.0,
            artery_angle: 60.0,
            vein_angle: 70.0,
            child_spread: 35.0,
            wave_amplitude: 4.0,
            wavelength: 80.0,
            wave_periods: 3,
            artery_width: 7.0,
            vein_width: 9.0,
        }
    }
}

/// Values the phantom was built with, in the source frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTruth {
    pub temporal_angle: f64,
    pub width: f64,
    pub density: f64,
    /// Tortuosity of each wavy child vessel.
    pub child_tortuosity: f64,
    /// Median tortuosity over trunks and children.
    pub tortuosity_med: f64,
}

#[derive(Debug, Clone)]
pub struct PhantomEye {
    pub image: RgbImage,
    pub artery: LabelMask,
    pub vein: LabelMask,
    pub disc: LabelMask,
    pub fovea: Keypoint,
    pub fundus_center: Keypoint,
    pub artery_truth: ClassTruth,
    pub vein_truth: ClassTruth,
}

fn wavy(origin: Point, axis: Point, normal: Point, spec: &EyeSpec, step: f64) -> Vec<Point> {
    let len = spec.wavelength * spec.wave_periods as f64;
    let n = (len / step).ceil() as usize;
    (0..=n)
        .map(|i| {
            let t = len * i as f64 / n as f64;
            let off = spec.wave_amplitude * (1.0 - (std::f64::consts::TAU * t / spec.wavelength).cos());
            (
                origin.0 + t * axis.0 + off * normal.0,
                origin.1 + t * axis.1 + off * normal.1,
            )
        })
        .collect()
}

/// Two temporal arcades per class leaving a disc, each a straight trunk that
/// splits into two sinusoidal children.
pub fn phantom_eye(spec: &EyeSpec) -> PhantomEye {
    let n = spec.frame;
    let c = (n as f64 / 2.0, n as f64 / 2.0);
    let disc_c = (c.0 + spec.disc_offset, c.1);
    let fovea = Keypoint::new(c.0 + spec.fovea_offset, c.1);
    let inside_fundus = |x: usize, y: usize| (x as f64 - c.0).hypot(y as f64 - c.1) <= spec.fundus_radius;
    let disc = LabelMask::from_fn(n, n, |x, y| {
        (x as f64 - disc_c.0).hypot(y as f64 - disc_c.1) <= spec.disc_radius
    });
    let child_tort = tortuosity(&wavy((0.0, 0.0), (1.0, 0.0), (0.0, 1.0), spec, 0.01)).unwrap_or(1.0);
    let draw = |angle: f64, width: f64| {
        let mut m = LabelMask::zeros(n, n, LabelScheme::Binary);
        for sign in [-1.0, 1.0] {
            let trunk_deg = sign * angle;
            let d = unit(trunk_deg);
            let start = (disc_c.0 + spec.trunk_start * d.0, disc_c.1 + spec.trunk_start * d.1);
            let end_r = spec.trunk_start + spec.trunk_length;
            let j = (disc_c.0 + end_r * d.0, disc_c.1 + end_r * d.1);
            stamp_polyline(&mut m, &[start, j], width);
            for side in [-1.0, 1.0] {
                let ax = unit(trunk_deg + side * spec.child_spread);
                // Waves bulge away from the sibling.
                let normal = (-ax.1 * side, ax.0 * side);
                stamp_polyline(&mut m, &wavy(j, ax, normal, spec, 0.5), width);
            }
        }
        LabelMask::from_fn(n, n, |x, y| m.get(x, y) != 0 && inside_fundus(x, y))
    };
    let artery = draw(spec.artery_angle, spec.artery_width);
    let vein = draw(spec.vein_angle, spec.vein_width);
    let fundus_px = (0..n * n).filter(|i| inside_fundus(i % n, i / n)).count() as f64;
    let truth = |m: &LabelMask, angle: f64, width: f64| ClassTruth {
        temporal_angle: 2.0 * angle,
        width,
        density: 100.0 * m.count_nonzero() as f64 / fundus_px,
        child_tortuosity: child_tort,
        // Two straight trunks and four children.
        tortuosity_med: child_tort,
    };
    let artery_truth = truth(&artery, spec.artery_angle, spec.artery_width);
    let vein_truth = truth(&vein, spec.vein_angle, spec.vein_width);

    let mut image = RgbImage::filled(n, n, [0, 0, 0]);
    for y in 0..n {
        for x in 0..n {
            if !inside_fundus(x, y) {
                continue;
            }
            let df = (x as f64 - fovea.x).hypot(y as f64 - fovea.y);
            let shade = (1.0 - 0.25 * (-df * df / (2.0 * 60.0f64.powi(2))).exp()) as f32;
            let mut rgb = [190.0 * shade, 90.0 * shade, 40.0 * shade];
            if disc.get(x, y) != 0 {
                rgb = [245.0, 215.0, 160.0];
            }
            if vein.get(x, y) != 0 {
                rgb = [120.0, 35.0, 25.0];
            } else if artery.get(x, y) != 0 {
                rgb = [160.0, 50.0, 30.0];
            }
            image.set(x, y, rgb.map(|v| v.round() as u8));
        }
    }
    PhantomEye {
        image,
        artery,
        vein,
        disc,
        fovea,
        fundus_center: Keypoint::new(c.0, c.1),
        artery_truth,
        vein_truth,
    }
}

/// Random smooth closed-form curve `(t, Σ a_k sin(f_k t + φ_k))` sampled at
/// unit parameter steps.
pub fn random_smooth_curve(rng: &mut impl Rng, length: f64) -> Vec<(f64, f64)> {
    let terms: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(2.0..12.0),
                rng.random_range(0.01..0.05),
                rng.random_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    (0..=length as usize)
        .map(|i| {
            let t = i as f64;
            (t, terms.iter().map(|(a, f, p)| a * (f * t + p).sin()).sum())
        })
        .collect()
}
