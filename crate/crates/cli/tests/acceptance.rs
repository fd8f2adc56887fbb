//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vasculo::biomarkers::{analyze_class, knudtson, vascular_density, Disc, FeatureConfig, RegionSpec, VesselClass};
use vasculo::evalstats::{dice, group_kfold};
use vasculo::fuse::{
    extract_keypoint, make_heatmap, tiled_predict, tta_predict, HeatmapSpec, PatchPredictor, Tiling, TtaMode, Window,
};
use vasculo::phantom::{bar, phantom_eye, random_smooth_curve, random_tree, x_crossing, y_junction, EyeSpec};
use vasculo::prep::{detect_bounds, NORM_SIZE};
use vasculo::raster::{
    merge_av, save_mask, save_rgb, split_av, Keypoint, LabelMask, LabelScheme, Planes, ProbMap, AV_CROSSING,
};
use vasculo::vesselgeom::{fit_chain, fit_spline, mean_curvature, measure_widths, tortuosity, Point};
use vasculo::vesselgraph::{build_graph, skeletonize, NodeKind, Pixel};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(Vec<bool>, Vec<bool>)> = (0..10_000)
        .map(|_| {
            let density: f64 = rng.random();
            let a = (0..1024).map(|_| rng.random_bool(density)).collect();
            let b = (0..1024).map(|_| rng.random_bool(density)).collect();
            (a, b)
        })
        .collect();
    let masks: Vec<(LabelMask, LabelMask)> = pairs
        .iter()
        .map(|(a, b)| {
            (
                LabelMask::from_fn(32, 32, |x, y| a[y * 32 + x]),
                LabelMask::from_fn(32, 32, |x, y| b[y * 32 + x]),
            )
        })
        .collect();
    let start = Instant::now();
    let scores: Vec<f64> = masks.iter().map(|(a, b)| dice(a, b).unwrap()).collect();
    let secs = start.elapsed().as_secs_f64();
    let mut mismatches = 0;
    for ((a, b), score) in pairs.iter().zip(scores) {
        let (mut tp, mut fp, mut fn_) = (0u32, 0u32, 0u32);
        for (&p, &g) in a.iter().zip(b) {
            match (p, g) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let oracle = if tp + fp + fn_ == 0 {
            1.0
        } else {
            f64::from(2 * tp) / f64::from(2 * tp + fp + fn_)
        };
        if score != oracle {
            mismatches += 1;
        }
    }
    check(
        mismatches == 0 && secs < 5.0,
        format!("10000 pairs, {mismatches} mismatches, {secs:.3} s in dice"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad = 0;
    for _ in 0..500 {
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..40));
        let labels: Vec<u8> = (0..w * h).map(|_| rng.random_range(0..4)).collect();
        let m = LabelMask::new(w, h, LabelScheme::Av4, labels.clone()).unwrap();
        let (a, v) = split_av(&m).unwrap();
        for (i, &l) in labels.iter().enumerate() {
            if l == AV_CROSSING && !(a.labels()[i] == 1 && v.labels()[i] == 1) {
                bad += 1;
            }
        }
        if merge_av(&a, &v).unwrap() != m {
            bad += 1;
        }
    }
    check(bad == 0, format!("500 random masks, {bad} violations"))
}

/// 8-connected pixel chain through the rounded points of a dense polyline.
fn pixel_chain(points: &[Point]) -> Vec<Pixel> {
    let mut out: Vec<Pixel> = Vec::new();
    for p in points {
        let q = (p.0.round() as usize, p.1.round() as usize);
        if out.last() != Some(&q) {
            out.push(q);
        }
    }
    out
}

fn spline_tortuosity(chain: &[Pixel]) -> f64 {
    tortuosity(&fit_chain(chain).unwrap().resample(1.0)).unwrap()
}

fn criterion_3() -> Outcome {
    let straight: Vec<Point> = (0..200).map(|i| (i as f64, 5.0)).collect();
    let t_line = tortuosity(&straight).unwrap();
    let semi: Vec<Point> = (0..=4000)
        .map(|i| {
            let a = std::f64::consts::PI * i as f64 / 4000.0;
            (150.0 + 100.0 * a.cos(), 150.0 - 100.0 * a.sin())
        })
        .collect();
    let t_semi = spline_tortuosity(&pixel_chain(&semi));
    let l: Vec<Point> = (0..=2000)
        .map(|i| {
            let s = i as f64 / 10.0;
            if s <= 100.0 {
                (10.0 + s, 10.0)
            } else {
                (110.0, 10.0 + s - 100.0)
            }
        })
        .collect();
    let t_l = spline_tortuosity(&pixel_chain(&l));
    let e_semi = (t_semi / std::f64::consts::FRAC_PI_2 - 1.0).abs();
    let e_l = (t_l / 2f64.sqrt() - 1.0).abs();
    check(
        (t_line - 1.0).abs() <= 1e-9 && e_semi <= 0.01 && e_l <= 0.01,
        format!(
            "straight {t_line:.12}, semicircle {t_semi:.4} ({:.2}%), L {t_l:.4} ({:.2}%)",
            e_semi * 100.0,
            e_l * 100.0
        ),
    )
}

fn criterion_4() -> Outcome {
    let circle: Vec<Point> = (0..=6000)
        .map(|i| {
            let a = 1.5 * std::f64::consts::PI * i as f64 / 6000.0;
            (150.0 + 100.0 * a.cos(), 150.0 + 100.0 * a.sin())
        })
        .collect();
    let k = mean_curvature(&fit_chain(&pixel_chain(&circle)).unwrap());
    let e_circle = (k / 0.01 - 1.0).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let pts = random_smooth_curve(&mut rng, 300.0);
        let s = fit_spline(&pts).unwrap();
        let h = 1e-4;
        let (mut num, mut den) = (0.0, 0.0);
        for a in s.arc_samples(2.0) {
            let t = s.param_at_arc(a).clamp(2.0 * h, 1.0 - 2.0 * h);
            let p = |t: f64| s.point(t);
            let (pm, p0, pp) = (p(t - h), p(t), p(t + h));
            let d1 = ((pp.0 - pm.0) / (2.0 * h), (pp.1 - pm.1) / (2.0 * h));
            let d2 = (
                (pp.0 - 2.0 * p0.0 + pm.0) / (h * h),
                (pp.1 - 2.0 * p0.1 + pm.1) / (h * h),
            );
            let k_fd = (d1.0 * d2.1 - d1.1 * d2.0).abs() / (d1.0 * d1.0 + d1.1 * d1.1).powf(1.5);
            let k_an = s.curvature(t);
            num += (k_an - k_fd).powi(2);
            den += k_an.powi(2);
        }
        worst = worst.max((num / den).sqrt());
    }
    check(
        e_circle <= 0.05 && worst <= 0.02,
        format!(
            "circle κ̄ {k:.5} ({:.2}%), worst relative RMS on 50 curves {:.4}%",
            e_circle * 100.0,
            worst * 100.0
        ),
    )
}

fn longest_edge_caliber(mask: &LabelMask) -> Option<f64> {
    let g = build_graph(&skeletonize(mask), 10.0);
    let e = g.edges.iter().max_by(|a, b| a.length.total_cmp(&b.length))?;
    measure_widths(&fit_chain(&e.chain).ok()?, mask, 2.0).median
}

fn criterion_5() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut fails = Vec::new();
    for w in [3.0, 5.0, 7.0, 11.0] {
        for rot in [0.0, 30.0, 45.0, 60.0, 90.0] {
            let got = longest_edge_caliber(&bar(200, rot, w, 120.0));
            let err = got.map_or(f64::INFINITY, |g| (g - w).abs());
            worst = worst.max(err);
            if err > 1.0 {
                fails.push(format!("w={w} rot={rot}: {got:?}"));
            }
        }
    }
    check(
        fails.is_empty(),
        format!("20 bars, worst error {worst:.3} px {}", fails.join("; ")),
    )
}

fn criterion_6() -> Outcome {
    let y = build_graph(&skeletonize(&y_junction(200, 70.0, 7.0, 70.0)), 10.0);
    let x = build_graph(&skeletonize(&x_crossing(200, 70.0, 7.0, 70.0)), 10.0);
    let (yb, xc) = (y.count_kind(NodeKind::Bifurcation), x.count_kind(NodeKind::Crossing));
    let mut tree_detail = Vec::new();
    let mut trees_ok = true;
    for seed in 0..5 {
        let t = random_tree(seed, 49);
        let g = build_graph(&skeletonize(&t.mask), 10.0);
        let (b, e) = (g.count_kind(NodeKind::Bifurcation), g.edges.len());
        trees_ok &= b == t.bifurcations && e == t.segments;
        tree_detail.push(format!("{b}/{} bif, {e}/{} seg", t.bifurcations, t.segments));
    }
    check(
        yb == 1
            && y.count_kind(NodeKind::Crossing) == 0
            && xc == 1
            && x.count_kind(NodeKind::Bifurcation) == 0
            && trees_ok,
        format!(
            "Y {yb} bifurcation, X {xc} crossing, trees [{}]",
            tree_detail.join(", ")
        ),
    )
}

fn y_region(size: usize, arm: f64) -> RegionSpec {
    let c = size as f64 / 2.0;
    RegionSpec {
        disc: Some(Disc {
            center: Keypoint::new(c, c + arm),
            radius: 5.0,
            mask: None,
        }),
        ..Default::default()
    }
}

fn criterion_7() -> Outcome {
    let cfg = FeatureConfig::default();
    let mut parts = Vec::new();
    let mut ok = true;
    for angle in [30.0, 60.0, 90.0, 120.0, 150.0] {
        let m = y_junction(240, angle, 5.0, 90.0);
        let a = analyze_class(&m, VesselClass::Artery, &y_region(240, 90.0), &cfg);
        let got = a.bifurcation_angles(&y_region(240, 90.0), &cfg);
        let err = match got.as_slice() {
            [g] => (g - angle).abs(),
            _ => f64::INFINITY,
        };
        ok &= err <= 2.0;
        parts.push(format!("{angle}°→{:.2}", got.first().copied().unwrap_or(f64::NAN)));
    }
    // A child shorter than δ: the junction still counts but has no angle.
    let mut short = y_junction(240, 60.0, 5.0, 90.0);
    let c = 120.0;
    for y in 0..240 {
        for x in 0..240 {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            if dx > 0.0 && dy < 0.0 && dx.hypot(dy) > 22.0 {
                short.set(x, y, 0);
            }
        }
    }
    let long_delta = FeatureConfig {
        delta: 30.0,
        ..FeatureConfig::default()
    };
    let region = y_region(240, 90.0);
    let a = analyze_class(&short, VesselClass::Artery, &region, &long_delta);
    let excluded =
        a.bifurcation_angles(&region, &long_delta).is_empty() && a.graph.count_kind(NodeKind::Bifurcation) == 1;
    ok &= excluded;
    check(ok, format!("{}; short child excluded: {excluded}", parts.join(", ")))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bad = 0;
    for _ in 0..2000 {
        let (w, h) = (rng.random_range(1..30), rng.random_range(1..30));
        let v: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.3)).collect();
        let r: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.7)).collect();
        let vm = LabelMask::from_fn(w, h, |x, y| v[y * w + x]);
        let rm = LabelMask::from_fn(w, h, |x, y| r[y * w + x]);
        let area: u64 = r.iter().map(|&b| u64::from(b)).sum();
        let hit: u64 = v.iter().zip(&r).map(|(&a, &b)| u64::from(a && b)).sum();
        match vascular_density(&vm, &rm) {
            Ok(d) => {
                if d != 100.0 * hit as f64 / area as f64 || !(0.0..=100.0).contains(&d) {
                    bad += 1;
                }
            }
            Err(_) => bad += usize::from(area != 0),
        }
    }
    check(bad == 0, format!("2000 random masks, {bad} violations"))
}

/// Exhaustive reference: sort, then fold the outermost pair each round
/// using a deque, carrying the middle element on odd counts.
fn pairing_oracle(widths: &[f64], k: f64) -> f64 {
    let mut cur: Vec<f64> = widths.to_vec();
    while cur.len() > 1 {
        cur.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut dq: VecDeque<f64> = cur.drain(..).collect();
        while let (Some(lo), Some(hi)) = (dq.pop_front(), dq.pop_back()) {
            cur.push(k * (lo * lo + hi * hi).sqrt());
            if dq.len() == 1 {
                cur.push(dq.pop_front().unwrap());
            }
        }
    }
    cur[0]
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for _ in 0..2000 {
        let n = rng.random_range(2..=8);
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(2.0..25.0)).collect();
        for k in [0.88, 0.95] {
            worst = worst.max((knudtson(&w, k).unwrap() - pairing_oracle(&w, k)).abs());
        }
    }
    let mut closed: f64 = 0.0;
    for w in [1.0, 7.5, 10.0, 13.0] {
        for k in [0.88, 0.95] {
            closed = closed.max((knudtson(&[w, w], k).unwrap() - k * 2f64.sqrt() * w).abs());
        }
    }
    check(
        worst <= 1e-9 && closed <= 1e-9,
        format!("oracle max diff {worst:.2e}, closed-form max diff {closed:.2e}"),
    )
}

struct Constant(f32);

impl PatchPredictor for Constant {
    fn classes(&self) -> usize {
        2
    }
    fn predict(&self, w: Window, _: &Planes) -> Result<ProbMap, vasculo::fuse::FuseError> {
        Ok(Planes::from_fn(w.size, w.size, 2, |_, _, _| self.0))
    }
}

/// Pointwise map of the first input channel, hence flip-equivariant.
struct Pointwise;

impl PatchPredictor for Pointwise {
    fn classes(&self) -> usize {
        1
    }
    fn predict(&self, w: Window, p: &Planes) -> Result<ProbMap, vasculo::fuse::FuseError> {
        Ok(Planes::from_fn(w.size, w.size, 1, |_, x, y| {
            p.get(0, x, y) * p.get(0, x, y)
        }))
    }
}

fn criterion_10() -> Outcome {
    let t = Tiling {
        window: 512,
        stride: 256,
    };
    let windows = t.windows(1024, 1024).len();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let input = Planes::from_fn(1024, 1024, 1, |_, _, _| rng.random::<f32>());
    let c = tiled_predict(&input, &Constant(0.375), &t).unwrap();
    let constant = c.as_slice().iter().all(|&v| v == 0.375);
    let single = tiled_predict(&input, &Pointwise, &t).unwrap();
    let tta = tta_predict(&input, &Pointwise, &t, TtaMode::Full).unwrap();
    let equal = single == tta;
    check(
        windows == 9 && constant && equal,
        format!("{windows} windows, constant exact: {constant}, TTA equals single pass: {equal}"),
    )
}

fn criterion_11() -> Outcome {
    let spec = HeatmapSpec { sigma: 50.0, size: 512 };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut bad = 0;
    for _ in 0..100 {
        let k = Keypoint::new(rng.random_range(1..511) as f64, rng.random_range(1..511) as f64);
        if extract_keypoint(&make_heatmap(k, &spec)).unwrap() != k {
            bad += 1;
        }
    }
    check(bad == 0, format!("100 keypoints, {bad} mismatches"))
}

fn criterion_12() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut good = 0;
    for _ in 0..50 {
        let (w, h) = (rng.random_range(500..800), rng.random_range(500..800));
        let r = rng.random_range(150.0..(w.min(h) as f64 * 0.45));
        let cx = rng.random_range(r + 5.0..w as f64 - r - 5.0);
        let cy = rng.random_range(r + 5.0..h as f64 - r - 5.0);
        let cut = rng.random_bool(0.5);
        let (top, bottom) = if cut {
            (cy - r * rng.random_range(0.6..0.9), cy + r * rng.random_range(0.6..0.9))
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        };
        let mut img = vasculo::raster::RgbImage::filled(w, h, [0, 0, 0]);
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let yf = y as f64;
                if dx * dx + dy * dy <= r * r && yf >= top.ceil() && yf <= bottom.floor() {
                    let n = rng.random_range(0..30u8);
                    img.set(x, y, [150 + n, 70 + n / 2, 30]);
                }
            }
        }
        let Ok(b) = detect_bounds(&img) else { continue };
        let mut ok = (b.cx - cx).abs() <= 2.0 && (b.cy - cy).abs() <= 2.0 && (b.r - r).abs() <= 2.0;
        if cut {
            ok &= b.cut_top.is_some_and(|t| (t - top.ceil()).abs() <= 2.0);
            ok &= b.cut_bottom.is_some_and(|t| (t - bottom.floor()).abs() <= 2.0);
        } else {
            ok &= b.cut_top.is_none() && b.cut_bottom.is_none();
        }
        good += usize::from(ok);
    }
    let black = detect_bounds(&vasculo::raster::RgbImage::filled(300, 200, [0, 0, 0])).is_err();
    check(
        good >= 48 && black,
        format!("{good}/50 within 2 px, all-black rejected: {black}"),
    )
}

fn criterion_13() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut split, mut unbalanced) = (0, 0);
    for trial in 0..10_000u64 {
        let n_groups = rng.random_range(5..40);
        let items: Vec<u32> = (0..rng.random_range(n_groups..120))
            .map(|i| if i < n_groups { i } else { rng.random_range(0..n_groups) })
            .collect();
        let folds = group_kfold(&items, 5, trial).unwrap();
        let mut fold_of: BTreeMap<u32, usize> = BTreeMap::new();
        for (g, f) in items.iter().zip(&folds) {
            if *fold_of.entry(*g).or_insert(*f) != *f {
                split += 1;
            }
        }
        let mut per = [0usize; 5];
        for f in fold_of.values() {
            per[*f] += 1;
        }
        if per.iter().max().unwrap() - per.iter().min().unwrap() > 1 {
            unbalanced += 1;
        }
    }
    check(
        split == 0 && unbalanced == 0,
        format!("10000 assignments, {split} split groups, {unbalanced} unbalanced"),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vasculo"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn golden_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/phantom_features.csv")
}

fn criterion_14() -> Outcome {
    let spec = EyeSpec::default();
    let eye = phantom_eye(&spec);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let d = |s: &str| dir.path().join(s);
    for sub in ["images", "masks", "disc", "prep", "run1", "run2"] {
        std::fs::create_dir_all(d(sub)).map_err(|e| e.to_string())?;
    }
    let io = |r: std::io::Result<()>| r.map_err(|e| e.to_string());
    io(save_rgb(d("images/phantom.png"), &eye.image))?;
    io(save_mask(d("masks/phantom_artery.png"), &eye.artery))?;
    io(save_mask(d("masks/phantom_vein.png"), &eye.vein))?;
    io(save_mask(d("disc/phantom.png"), &eye.disc))?;
    io(std::fs::write(
        d("fovea.csv"),
        format!("image_id,x,y\nphantom,{},{}\n", eye.fovea.x, eye.fovea.y),
    ))?;
    let s = |p: PathBuf| p.to_string_lossy().into_owned();
    run_cli(&["prep", &s(d("images")), "--out", &s(d("prep"))])?;
    for run in ["run1", "run2"] {
        run_cli(&[
            "extract",
            &s(d("masks")),
            "--bounds",
            &s(d("prep")),
            "--disc",
            &s(d("disc")),
            "--fovea",
            &s(d("fovea.csv")),
            "--out",
            &s(d(run)),
        ])?;
    }
    let csv1 = std::fs::read(d("run1/features.csv")).map_err(|e| e.to_string())?;
    let csv2 = std::fs::read(d("run2/features.csv")).map_err(|e| e.to_string())?;
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        io(std::fs::write(golden_path(), &csv1))?;
    }
    let golden = std::fs::read(golden_path()).map_err(|e| format!("golden file: {e}"))?;
    let text = String::from_utf8_lossy(&csv1).into_owned();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let col = |n: &str| header.iter().position(|h| *h == n).unwrap();
    let scale = NORM_SIZE as f64 / (2.0 * spec.fundus_radius);
    let mut errs = Vec::new();
    let mut detail = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let v = |n: &str| f[col(n)].parse::<f64>().unwrap_or(f64::NAN);
        let truth = if f[1] == "artery" {
            &eye.artery_truth
        } else {
            &eye.vein_truth
        };
        let ta = v("temporal_angle") - truth.temporal_angle;
        let dd = v("vascular_density") - truth.density;
        let tt = v("tortuosity_med") / truth.tortuosity_med - 1.0;
        let cc = v("caliber_med") - truth.width * scale;
        detail.push(format!(
            "{} angle {:+.2}° density {:+.3} pp tortuosity {:+.2}% caliber {:+.2} px",
            f[1],
            ta,
            dd,
            tt * 100.0,
            cc
        ));
        if !(ta.abs() <= 2.0 && dd.abs() <= 0.1 && tt.abs() <= 0.01 && cc.abs() <= 1.0) {
            errs.push(f[1].to_string());
        }
    }
    let stable = csv1 == csv2;
    let matches_golden = csv1 == golden;
    check(
        errs.is_empty() && detail.len() == 2 && stable && matches_golden,
        format!(
            "{}; rerun identical: {stable}; golden match: {matches_golden}",
            detail.join("; ")
        ),
    )
}

fn main() {
    let criteria: [Criterion; 14] = [
        ("metric oracle equivalence", criterion_1),
        ("crossing semantics", criterion_2),
        ("tortuosity analytics", criterion_3),
        ("curvature analytics and gradient check", criterion_4),
        ("caliber on rotated bars", criterion_5),
        ("graph topology", criterion_6),
        ("bifurcation angles", criterion_7),
        ("vascular density", criterion_8),
        ("CRE pairing", criterion_9),
        ("fusion", criterion_10),
        ("heatmap codec", criterion_11),
        ("bounds detection", criterion_12),
        ("group folds", criterion_13),
        ("end-to-end phantom", criterion_14),
    ];
    let filter: BTreeSet<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let start = Instant::now();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let (status, detail) = match f() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "[{status}] {n:>2} {name}: {detail} ({:.1} s)",
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {failed} failed, total {:.1} s",
        start.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
