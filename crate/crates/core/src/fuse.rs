//! Model-agnostic prediction plumbing: 6-channel input assembly, overlapping
//! window fusion with a Gaussian merge kernel, flip test-time augmentation,
//! probability decoding and the heatmap keypoint codec.
//!
//! The network itself is behind [`PatchPredictor`]; this crate ships a
//! file-backed implementation that replays precomputed window outputs.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::{Keypoint, LabelMask, LabelScheme, Planes, ProbMap, RasterError, RgbImage};

#[derive(Debug, Error)]
pub enum FuseError {
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("input {width}x{height} is smaller than the {window}px window")]
    InputTooSmall { width: usize, height: usize, window: usize },
    #[error("predictor returned {actual:?} (w, h, c), expected {expected:?}")]
    PredictorShape {
        expected: (usize, usize, usize),
        actual: (usize, usize, usize),
    },
    #[error("{scheme} decoding needs {expected} classes, probability map has {actual}")]
    ClassCount {
        scheme: LabelScheme,
        expected: &'static str,
        actual: usize,
    },
    #[error("heatmap must be single-channel and nonempty")]
    EmptyHeatmap,
    #[error("no precomputed patch for window at ({x}, {y})")]
    MissingPatch { x: usize, y: usize },
    #[error("{path}: {message}")]
    PatchFile { path: PathBuf, message: String },
    #[error(transparent)]
    Raster(#[from] RasterError),
}

/// Location of one inference window inside the (possibly flipped) input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

/// Seam for a segmentation or heatmap network operating on square patches.
pub trait PatchPredictor: Sync {
    /// Number of output channels.
    fn classes(&self) -> usize;

    /// Per-pixel outputs in `[0, 1]` for one `window.size`² input patch.
    fn predict(&self, window: Window, patch: &Planes) -> Result<ProbMap, FuseError>;

    /// Whether `predict` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Concatenate an image and its enhanced version into `[R, G, B, R', G', B']`
/// scaled to `[0, 1]`.
pub fn stack_channels(original: &RgbImage, enhanced: &RgbImage) -> Result<Planes, FuseError> {
    if original.dims() != enhanced.dims() {
        return Err(FuseError::DimensionMismatch {
            left: original.dims(),
            right: enhanced.dims(),
        });
    }
    let (w, h) = original.dims();
    let mut out = Planes::zeros(w, h, 6);
    for (c, src) in [original, original, original, enhanced, enhanced, enhanced]
        .into_iter()
        .enumerate()
    {
        for (dst, v) in out.channel_mut(c).iter_mut().zip(src.channel(c % 3)) {
            *dst = f32::from(v) / 255.0;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tiling {
    pub window: usize,
    pub stride: usize,
}

impl Default for Tiling {
    /// 512px windows with 50% overlap.
    fn default() -> Self {
        Self {
            window: 512,
            stride: 256,
        }
    }
}

impl Tiling {
    /// Window origins along one axis of length `len`; the last window is
    /// aligned to the far edge.
    pub fn offsets(&self, len: usize) -> Vec<usize> {
        if len <= self.window {
            return vec![0];
        }
        let last = len - self.window;
        let mut v: Vec<usize> = (0..=last).step_by(self.stride.max(1)).collect();
        if *v.last().expect("nonempty") != last {
            v.push(last);
        }
        v
    }

    pub fn windows(&self, width: usize, height: usize) -> Vec<Window> {
        let xs = self.offsets(width);
        self.offsets(height)
            .into_iter()
            .flat_map(|y| {
                xs.iter().map(move |&x| Window {
                    x,
                    y,
                    size: self.window,
                })
            })
            .collect()
    }

    /// Gaussian merge weights centered in the window, sigma = window / 4.
    pub fn merge_kernel(&self) -> Vec<f64> {
        let n = self.window;
        let c = (n as f64 - 1.0) / 2.0;
        let s = n as f64 / 4.0;
        let g: Vec<f64> = (0..n)
            .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * s * s)).exp())
            .collect();
        let mut k = Vec::with_capacity(n * n);
        for gy in &g {
            for gx in &g {
                k.push(gy * gx);
            }
        }
        k
    }
}

/// Sliding-window inference: every window's output is blended with the merge
/// kernel, `out = Σ w_i p_i / Σ w_i`, summed in window order.
pub fn tiled_predict(input: &Planes, predictor: &dyn PatchPredictor, tiling: &Tiling) -> Result<ProbMap, FuseError> {
    let (w, h) = (input.width(), input.height());
    if w < tiling.window || h < tiling.window {
        return Err(FuseError::InputTooSmall {
            width: w,
            height: h,
            window: tiling.window,
        });
    }
    let windows = tiling.windows(w, h);
    let classes = predictor.classes();
    let run = |win: &Window| -> Result<ProbMap, FuseError> {
        let patch = input.crop(win.x, win.y, win.size);
        let out = predictor.predict(*win, &patch)?;
        let shape = (out.width(), out.height(), out.channels());
        let expected = (win.size, win.size, classes);
        if shape != expected {
            return Err(FuseError::PredictorShape {
                expected,
                actual: shape,
            });
        }
        Ok(out)
    };
    let outputs: Vec<ProbMap> = if predictor.concurrent() {
        windows.par_iter().map(run).collect::<Result<_, _>>()?
    } else {
        windows.iter().map(run).collect::<Result<_, _>>()?
    };

    let kernel = tiling.merge_kernel();
    let n = tiling.window;
    let mut acc = vec![0.0f64; classes * w * h];
    let mut wsum = vec![0.0f64; w * h];
    for (win, out) in windows.iter().zip(&outputs) {
        for y in 0..n {
            for x in 0..n {
                let k = kernel[y * n + x];
                let gi = (win.y + y) * w + win.x + x;
                wsum[gi] += k;
                for c in 0..classes {
                    acc[c * w * h + gi] += k * f64::from(out.get(c, x, y));
                }
            }
        }
    }
    let data = acc
        .iter()
        .enumerate()
        .map(|(i, &a)| (a / wsum[i % (w * h)]).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(Planes::from_vec(w, h, classes, data)?)
}

/// Flip set averaged at test time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TtaMode {
    /// Single pass.
    None,
    /// Identity and left-right flip.
    Horizontal,
    /// Identity and top-bottom flip.
    Vertical,
    /// The full flip group: identity, horizontal, vertical and both.
    Full,
}

impl TtaMode {
    /// `(horizontal, vertical)` flips making up this set.
    pub fn flips(self) -> &'static [(bool, bool)] {
        match self {
            TtaMode::None => &[(false, false)],
            TtaMode::Horizontal => &[(false, false), (true, false)],
            TtaMode::Vertical => &[(false, false), (false, true)],
            TtaMode::Full => &[(false, false), (true, false), (false, true), (true, true)],
        }
    }
}

/// Mean of [`tiled_predict`] over flipped copies of the input, each output
/// flipped back into the input frame.
pub fn tta_predict(
    input: &Planes,
    predictor: &dyn PatchPredictor,
    tiling: &Tiling,
    mode: TtaMode,
) -> Result<ProbMap, FuseError> {
    let flips = mode.flips();
    let mut acc: Option<Vec<f64>> = None;
    let mut shape = (0, 0, 0);
    for &(hf, vf) in flips {
        let out = if hf || vf {
            tiled_predict(&input.flipped(hf, vf), predictor, tiling)?.flipped(hf, vf)
        } else {
            tiled_predict(input, predictor, tiling)?
        };
        shape = (out.width(), out.height(), out.channels());
        let a = acc.get_or_insert_with(|| vec![0.0; out.as_slice().len()]);
        for (s, &v) in a.iter_mut().zip(out.as_slice()) {
            *s += f64::from(v);
        }
    }
    let n = flips.len() as f64;
    let data = acc
        .expect("flip set is nonempty")
        .into_iter()
        .map(|s| (s / n) as f32)
        .collect();
    Ok(Planes::from_vec(shape.0, shape.1, shape.2, data)?)
}

/// Binarize (p ≥ 0.5 on the last channel) or take the per-pixel argmax with
/// ties going to the lowest class index.
pub fn decode(prob: &ProbMap, scheme: LabelScheme) -> Result<LabelMask, FuseError> {
    let (w, h, c) = (prob.width(), prob.height(), prob.channels());
    let labels = match scheme {
        LabelScheme::Binary => {
            if !(c == 1 || c == 2) {
                return Err(FuseError::ClassCount {
                    scheme,
                    expected: "1 or 2",
                    actual: c,
                });
            }
            prob.channel(c - 1).iter().map(|&p| u8::from(p >= 0.5)).collect()
        }
        LabelScheme::Av4 => {
            if c != 4 {
                return Err(FuseError::ClassCount {
                    scheme,
                    expected: "4",
                    actual: c,
                });
            }
            (0..w * h)
                .map(|i| {
                    let mut best = 0;
                    for k in 1..4 {
                        if prob.channel(k)[i] > prob.channel(best)[i] {
                            best = k;
                        }
                    }
                    best as u8
                })
                .collect()
        }
    };
    Ok(LabelMask::new(w, h, scheme, labels)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeatmapSpec {
    pub sigma: f64,
    pub size: usize,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        Self { sigma: 50.0, size: 512 }
    }
}

/// Unit-peak Gaussian target centered on `k`.
pub fn make_heatmap(k: Keypoint, spec: &HeatmapSpec) -> ProbMap {
    let s2 = 2.0 * spec.sigma * spec.sigma;
    Planes::from_fn(spec.size, spec.size, 1, |_, x, y| {
        let d2 = (x as f64 - k.x).powi(2) + (y as f64 - k.y).powi(2);
        (-d2 / s2).exp() as f32
    })
}

/// 2-D index of the heatmap maximum; the first in row-major order wins ties.
pub fn extract_keypoint(h: &ProbMap) -> Result<Keypoint, FuseError> {
    if h.channels() != 1 {
        return Err(FuseError::EmptyHeatmap);
    }
    let (best, _) = h.channel(0).iter().enumerate().filter(|(_, v)| !v.is_nan()).fold(
        (None, f32::NEG_INFINITY),
        |(bi, bv), (i, &v)| {
            if bi.is_none() || v > bv {
                (Some(i), v)
            } else {
                (bi, bv)
            }
        },
    );
    let i = best.ok_or(FuseError::EmptyHeatmap)?;
    Ok(Keypoint::new((i % h.width()) as f64, (i / h.width()) as f64))
}

/// JSON manifest describing precomputed window outputs on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchManifest {
    pub classes: usize,
    pub window: usize,
    pub patches: Vec<PatchEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchEntry {
    pub x: usize,
    pub y: usize,
    /// Path relative to the manifest: little-endian f32, channel-major
    /// `classes × window × window`.
    pub file: String,
}

/// Replays precomputed patch outputs keyed by window origin.
#[derive(Debug)]
pub struct FilePredictor {
    classes: usize,
    window: usize,
    patches: HashMap<(usize, usize), PathBuf>,
}

impl FilePredictor {
    pub fn open(manifest_path: impl AsRef<Path>) -> Result<Self, FuseError> {
        let path = manifest_path.as_ref();
        let err = |message: String| FuseError::PatchFile {
            path: path.to_path_buf(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let manifest: PatchManifest = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let dir = path.parent().unwrap_or(Path::new("."));
        Ok(Self {
            classes: manifest.classes,
            window: manifest.window,
            patches: manifest
                .patches
                .into_iter()
                .map(|p| ((p.x, p.y), dir.join(p.file)))
                .collect(),
        })
    }
}

impl PatchPredictor for FilePredictor {
    fn classes(&self) -> usize {
        self.classes
    }

    fn predict(&self, window: Window, _patch: &Planes) -> Result<ProbMap, FuseError> {
        let path = self.patches.get(&(window.x, window.y)).ok_or(FuseError::MissingPatch {
            x: window.x,
            y: window.y,
        })?;
        read_patch(path, self.window, self.classes)
    }
}

pub fn write_patch(path: impl AsRef<Path>, planes: &Planes) -> std::io::Result<()> {
    let bytes: Vec<u8> = planes.as_slice().iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes)
}

pub fn read_patch(path: impl AsRef<Path>, size: usize, classes: usize) -> Result<Planes, FuseError> {
    let path = path.as_ref();
    let err = |message: String| FuseError::PatchFile {
        path: path.to_path_buf(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|e| err(e.to_string()))?;
    let expected = size * size * classes * 4;
    if bytes.len() != expected {
        return Err(err(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Ok(Planes::from_vec(size, size, classes, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Constant(f32, AtomicUsize);

    impl PatchPredictor for Constant {
        fn classes(&self) -> usize {
            2
        }
        fn predict(&self, w: Window, _: &Planes) -> Result<ProbMap, FuseError> {
            self.1.fetch_add(1, Ordering::SeqCst);
            Ok(Planes::from_fn(w.size, w.size, 2, |_, _, _| self.0))
        }
    }

    struct Echo;

    impl PatchPredictor for Echo {
        fn classes(&self) -> usize {
            1
        }
        fn predict(&self, w: Window, p: &Planes) -> Result<ProbMap, FuseError> {
            Ok(Planes::from_fn(w.size, w.size, 1, |_, x, y| p.get(0, x, y)))
        }
    }

    /// Ignores the input and returns `x² y / 27` on a 4×4 patch.
    struct Table;

    impl PatchPredictor for Table {
        fn classes(&self) -> usize {
            1
        }
        fn predict(&self, w: Window, _: &Planes) -> Result<ProbMap, FuseError> {
            Ok(Planes::from_fn(w.size, w.size, 1, |_, x, y| (x * x * y) as f32 / 27.0))
        }
    }

    fn ramp(size: usize) -> Planes {
        Planes::from_fn(size, size, 6, |c, x, y| {
            ((x * 7 + y * 13 + c * 31) % 255) as f32 / 255.0
        })
    }

    #[test]
    fn stack_zero_and_constants() {
        let z = RgbImage::filled(8, 4, [0, 0, 0]);
        assert!(stack_channels(&z, &z).unwrap().as_slice().iter().all(|&v| v == 0.0));
        let a = RgbImage::filled(8, 4, [10, 20, 30]);
        let b = RgbImage::filled(8, 4, [40, 50, 60]);
        let s = stack_channels(&a, &b).unwrap();
        for (c, want) in [10.0f32, 20.0, 30.0, 40.0, 50.0, 60.0].iter().enumerate() {
            let mean = s.channel(c).iter().sum::<f32>() / 32.0;
            assert!((mean - want / 255.0).abs() < 1e-6);
        }
        let bad = RgbImage::filled(4, 4, [0, 0, 0]);
        assert!(stack_channels(&a, &bad).is_err());
    }

    #[test]
    fn stack_channel_zero_is_original() {
        let mut img = RgbImage::filled(5, 5, [0, 0, 0]);
        img.set(2, 3, [77, 1, 2]);
        let s = stack_channels(&img, &RgbImage::filled(5, 5, [9, 9, 9])).unwrap();
        for (v, o) in s.channel(0).iter().zip(img.channel(0)) {
            assert_eq!(*v, f32::from(o) / 255.0);
        }
    }

    #[test]
    fn nine_windows_for_1024() {
        let t = Tiling::default();
        assert_eq!(t.offsets(1024), vec![0, 256, 512]);
        let p = Constant(0.3, AtomicUsize::new(0));
        let out = tiled_predict(&Planes::zeros(1024, 1024, 6), &p, &t).unwrap();
        assert_eq!(p.1.load(Ordering::SeqCst), 9);
        assert!(out.as_slice().iter().all(|&v| v == 0.3f32));
    }

    #[test]
    fn echo_predictor_reproduces_channel() {
        let t = Tiling { window: 64, stride: 32 };
        let input = ramp(128);
        let out = tiled_predict(&input, &Echo, &t).unwrap();
        for (a, b) in out.channel(0).iter().zip(input.channel(0)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn flip_equivariant_tta_equals_single_pass() {
        let t = Tiling { window: 32, stride: 16 };
        let input = ramp(64);
        let single = tiled_predict(&input, &Echo, &t).unwrap();
        let tta = tta_predict(&input, &Echo, &t, TtaMode::Full).unwrap();
        assert_eq!(single, tta);
    }

    #[test]
    fn tta_on_table_predictor_matches_hand_mean() {
        // Mean of T, hflip(T), vflip(T), hvflip(T) for T = x² y / 27 on 4×4
        // is (x² + (3 - x)²) / 36, independent of y.
        let t = Tiling { window: 4, stride: 2 };
        let out = tta_predict(&Planes::zeros(4, 4, 6), &Table, &t, TtaMode::Full).unwrap();
        let expected = [0.25f32, 5.0 / 36.0, 5.0 / 36.0, 0.25];
        for y in 0..4 {
            for (x, e) in expected.iter().enumerate() {
                assert!((out.get(0, x, y) - e).abs() < 1e-6, "({x},{y})");
            }
        }
        // Vertical-only set: (T + vflip(T)) / 2 = x² (y + 3 - y) / 54 = x² / 18.
        let v = tta_predict(&Planes::zeros(4, 4, 6), &Table, &t, TtaMode::Vertical).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert!((v.get(0, x, y) - (x * x) as f32 / 18.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn tta_commutes_with_flips() {
        struct Skewed;
        impl PatchPredictor for Skewed {
            fn classes(&self) -> usize {
                1
            }
            fn predict(&self, w: Window, p: &Planes) -> Result<ProbMap, FuseError> {
                Ok(Planes::from_fn(w.size, w.size, 1, |_, x, y| {
                    0.5 * p.get(1, x, y) + 0.5 * (x as f32 / w.size as f32) * (y as f32 / w.size as f32)
                }))
            }
        }
        let t = Tiling { window: 16, stride: 8 };
        let input = ramp(32);
        let a = tta_predict(&input.flipped(true, false), &Skewed, &t, TtaMode::Full).unwrap();
        let b = tta_predict(&input, &Skewed, &t, TtaMode::Full)
            .unwrap()
            .flipped(true, false);
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn wrong_shape_is_reported() {
        struct Bad;
        impl PatchPredictor for Bad {
            fn classes(&self) -> usize {
                1
            }
            fn predict(&self, _: Window, _: &Planes) -> Result<ProbMap, FuseError> {
                Ok(Planes::zeros(3, 3, 1))
            }
        }
        let t = Tiling { window: 8, stride: 4 };
        assert!(matches!(
            tiled_predict(&Planes::zeros(16, 16, 6), &Bad, &t),
            Err(FuseError::PredictorShape { .. })
        ));
    }

    #[test]
    fn decode_rules() {
        let p = Planes::from_vec(2, 1, 1, vec![0.5, 0.4999]).unwrap();
        assert_eq!(decode(&p, LabelScheme::Binary).unwrap().labels(), &[1, 0]);
        let av = Planes::from_vec(1, 1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(decode(&av, LabelScheme::Av4).unwrap().labels(), &[3]);
        let tie = Planes::from_vec(1, 1, 4, vec![0.1, 0.4, 0.4, 0.1]).unwrap();
        assert_eq!(decode(&tie, LabelScheme::Av4).unwrap().labels(), &[1]);
        assert!(decode(&av, LabelScheme::Binary).is_err());
        assert!(decode(&p, LabelScheme::Av4).is_err());
    }

    #[test]
    fn heatmap_values_and_round_trip() {
        let spec = HeatmapSpec::default();
        let k = Keypoint::new(100.0, 200.0);
        let h = make_heatmap(k, &spec);
        assert_eq!(h.get(0, 100, 200), 1.0);
        assert!((h.get(0, 150, 200) - (-0.5f32).exp()).abs() < 1e-6);
        assert_eq!(extract_keypoint(&h).unwrap(), k);
    }

    #[test]
    fn heatmap_tie_breaks_row_major() {
        let mut h = Planes::zeros(8, 8, 1);
        h.set(0, 5, 5, 0.9);
        h.set(0, 0, 0, 0.9);
        assert_eq!(extract_keypoint(&h).unwrap(), Keypoint::new(0.0, 0.0));
        assert!(extract_keypoint(&Planes::zeros(4, 4, 2)).is_err());
    }

    #[test]
    fn file_predictor_replays_patches() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tiling { window: 8, stride: 4 };
        let mut entries = Vec::new();
        for w in t.windows(16, 16) {
            let name = format!("p_{}_{}.f32", w.x, w.y);
            let val = (w.x + w.y) as f32 / 32.0;
            write_patch(
                dir.path().join(&name),
                &Planes::from_fn(8, 8, 2, |c, _, _| val * c as f32),
            )
            .unwrap();
            entries.push(PatchEntry {
                x: w.x,
                y: w.y,
                file: name,
            });
        }
        let manifest = PatchManifest {
            classes: 2,
            window: 8,
            patches: entries,
        };
        let mpath = dir.path().join("manifest.json");
        std::fs::write(&mpath, serde_json::to_string(&manifest).unwrap()).unwrap();
        let fp = FilePredictor::open(&mpath).unwrap();
        let out = tiled_predict(&Planes::zeros(16, 16, 6), &fp, &t).unwrap();
        assert_eq!(out.get(0, 3, 3), 0.0);
        // The top-left corner is covered by the (0, 0) window alone.
        assert_eq!(out.get(1, 0, 0), 0.0);
        assert!((out.get(1, 15, 15) - 0.5).abs() < 1e-6);
        let other = Tiling { window: 8, stride: 3 };
        assert!(matches!(
            tiled_predict(&Planes::zeros(16, 16, 6), &fp, &other),
            Err(FuseError::MissingPatch { .. })
        ));
    }
}
