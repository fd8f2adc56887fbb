//! Raster carriers shared by every stage: RGB fundus images, integer label
//! masks, planar real-valued fields and keypoints, plus 8-bit PNG I/O that
//! enforces the on-disk label contract.
//!
//! Label contract:
//! * `Binary` masks read `{0,1}` or `{0,255}` and are always written as `{0,255}`.
//! * `Av4` masks use raw values `0` background, `1` artery, `2` vein, `3` crossing.

use std::fmt;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageEncoder};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image dimensions must be nonzero, got {width}x{height}")]
    Empty { width: usize, height: usize },
    #[error("buffer length {actual} does not match expected {expected}")]
    BufferLength { expected: usize, actual: usize },
    #[error("out-of-range label {value} at ({x}, {y}) for {scheme} mask")]
    OutOfRangeLabel {
        value: u8,
        x: usize,
        y: usize,
        scheme: LabelScheme,
    },
    #[error("expected {expected} mask, got {actual}")]
    WrongScheme { expected: LabelScheme, actual: LabelScheme },
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{path}: expected an 8-bit single-channel PNG")]
    NotGray8 { path: String },
    #[error("{path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
}

/// Label encoding carried by a [`LabelMask`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelScheme {
    /// 0 background, 1 foreground.
    Binary,
    /// 0 background, 1 artery, 2 vein, 3 crossing (artery and vein).
    Av4,
}

impl LabelScheme {
    pub const fn cardinality(self) -> u8 {
        match self {
            LabelScheme::Binary => 2,
            LabelScheme::Av4 => 4,
        }
    }
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelScheme::Binary => f.write_str("binary"),
            LabelScheme::Av4 => f.write_str("av4"),
        }
    }
}

pub const AV_BACKGROUND: u8 = 0;
pub const AV_ARTERY: u8 = 1;
pub const AV_VEIN: u8 = 2;
pub const AV_CROSSING: u8 = 3;

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RgbImage")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, RasterError> {
        check_dims(width, height)?;
        let expected = width * height * 3;
        if data.len() != expected {
            return Err(RasterError::BufferLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    /// Image filled with one color.
    ///
    /// # Panics
    ///
    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be nonzero");
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn channel(&self, c: usize) -> impl Iterator<Item = u8> + '_ {
        self.data.iter().skip(c).step_by(3).copied()
    }
}

/// Per-pixel class labels under a [`LabelScheme`].
#[derive(Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    scheme: LabelScheme,
    labels: Vec<u8>,
}

impl fmt::Debug for LabelMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LabelMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("scheme", &self.scheme)
            .finish_non_exhaustive()
    }
}

impl LabelMask {
    pub fn new(width: usize, height: usize, scheme: LabelScheme, labels: Vec<u8>) -> Result<Self, RasterError> {
        check_dims(width, height)?;
        if labels.len() != width * height {
            return Err(RasterError::BufferLength {
                expected: width * height,
                actual: labels.len(),
            });
        }
        if let Some(i) = labels.iter().position(|&v| v >= scheme.cardinality()) {
            return Err(RasterError::OutOfRangeLabel {
                value: labels[i],
                x: i % width,
                y: i / width,
                scheme,
            });
        }
        Ok(Self {
            width,
            height,
            scheme,
            labels,
        })
    }

    /// All-background mask.
    ///
    /// # Panics
    ///
    /// Panics if either dimension is zero.
    pub fn zeros(width: usize, height: usize, scheme: LabelScheme) -> Self {
        assert!(width > 0 && height > 0, "mask dimensions must be nonzero");
        Self {
            width,
            height,
            scheme,
            labels: vec![0; width * height],
        }
    }

    /// Binary mask from a predicate over pixel coordinates.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(width, height, LabelScheme::Binary);
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.labels[y * width + x] = 1;
                }
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn scheme(&self) -> LabelScheme {
        self.scheme
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    /// Nonzero label at `(x, y)`; coordinates outside the frame read as background.
    pub fn is_set(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.labels[y as usize * self.width + x as usize] != 0
    }

    /// # Panics
    ///
    /// Panics if `label` is not valid under the mask's scheme.
    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        assert!(
            label < self.scheme.cardinality(),
            "label {label} invalid for {} mask",
            self.scheme
        );
        self.labels[y * self.width + x] = label;
    }

    /// Number of non-background pixels.
    pub fn count_nonzero(&self) -> usize {
        self.labels.iter().filter(|&&v| v != 0).count()
    }

    fn require(&self, scheme: LabelScheme) -> Result<(), RasterError> {
        if self.scheme == scheme {
            Ok(())
        } else {
            Err(RasterError::WrongScheme {
                expected: scheme,
                actual: self.scheme,
            })
        }
    }

    pub(crate) fn require_binary(&self) -> Result<(), RasterError> {
        self.require(LabelScheme::Binary)
    }

    pub(crate) fn same_dims(&self, other: &LabelMask) -> Result<(), RasterError> {
        if self.dims() == other.dims() {
            Ok(())
        } else {
            Err(RasterError::DimensionMismatch {
                left: self.dims(),
                right: other.dims(),
            })
        }
    }
}

/// Planar (channel-major) real-valued field. Used both for the multi-channel
/// model input and for per-class probability outputs.
#[derive(Clone, PartialEq)]
pub struct Planes {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

/// Per-pixel per-class probabilities in `[0, 1]`.
pub type ProbMap = Planes;

impl fmt::Debug for Planes {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Planes")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl Planes {
    /// # Panics
    ///
    /// Panics if any dimension is zero.
    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        assert!(
            width > 0 && height > 0 && channels > 0,
            "planes dimensions must be nonzero"
        );
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self, RasterError> {
        check_dims(width, height)?;
        let expected = width * height * channels;
        if channels == 0 || data.len() != expected {
            return Err(RasterError::BufferLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut p = Self::zeros(width, height, channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    p.data[(c * height + y) * width + x] = f(c, x, y);
                }
            }
        }
        p
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Square window with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> Planes {
        let mut out = Planes::zeros(size, size, self.channels);
        for c in 0..self.channels {
            for y in 0..size {
                let src = (c * self.height + y0 + y) * self.width + x0;
                let dst = (c * size + y) * size;
                out.data[dst..dst + size].copy_from_slice(&self.data[src..src + size]);
            }
        }
        out
    }

    /// Mirror left-right and/or top-bottom.
    pub fn flipped(&self, horizontal: bool, vertical: bool) -> Planes {
        let (w, h) = (self.width, self.height);
        Planes::from_fn(w, h, self.channels, |c, x, y| {
            let sx = if horizontal { w - 1 - x } else { x };
            let sy = if vertical { h - 1 - y } else { y };
            self.get(c, sx, sy)
        })
    }
}

/// A point in pixel-index coordinates: `x` is the column, `y` the row.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
}

impl Keypoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Keypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

fn check_dims(width: usize, height: usize) -> Result<(), RasterError> {
    if width == 0 || height == 0 {
        Err(RasterError::Empty { width, height })
    } else {
        Ok(())
    }
}

/// Options applied while decoding masks from disk.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskReadOptions {
    /// Raw value used by annotation files for vessels of unknown type.
    /// Pixels with this value are read as background.
    pub unknown_label: Option<u8>,
}

/// Load an 8-bit single-channel PNG as a label mask.
pub fn load_mask(path: impl AsRef<Path>, scheme: LabelScheme) -> Result<LabelMask, RasterError> {
    load_mask_with(path, scheme, MaskReadOptions::default())
}

pub fn load_mask_with(
    path: impl AsRef<Path>,
    scheme: LabelScheme,
    opts: MaskReadOptions,
) -> Result<LabelMask, RasterError> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| RasterError::Image {
        path: path.display().to_string(),
        source,
    })?;
    let DynamicImage::ImageLuma8(gray) = img else {
        return Err(RasterError::NotGray8 {
            path: path.display().to_string(),
        });
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let mut labels = gray.into_raw();
    for (i, v) in labels.iter_mut().enumerate() {
        if opts.unknown_label == Some(*v) {
            *v = 0;
            continue;
        }
        let decoded = match (scheme, *v) {
            (LabelScheme::Binary, 0) => Some(0),
            (LabelScheme::Binary, 1 | 255) => Some(1),
            (LabelScheme::Av4, 0..=3) => Some(*v),
            _ => None,
        };
        match decoded {
            Some(d) => *v = d,
            None => {
                return Err(RasterError::OutOfRangeLabel {
                    value: *v,
                    x: i % w,
                    y: i / w,
                    scheme,
                })
            }
        }
    }
    LabelMask::new(w, h, scheme, labels)
}

/// PNG bytes for a mask following the on-disk contract.
pub fn encode_mask_png(mask: &LabelMask) -> Vec<u8> {
    let raw: Vec<u8> = match mask.scheme {
        LabelScheme::Binary => mask.labels.iter().map(|&v| if v != 0 { 255 } else { 0 }).collect(),
        LabelScheme::Av4 => mask.labels.clone(),
    };
    encode_png(&raw, mask.width, mask.height, image::ExtendedColorType::L8)
}

/// Paletted RGB rendering of an A/V mask: arteries red, veins blue, crossings green.
pub fn encode_av_preview_png(mask: &LabelMask) -> Vec<u8> {
    const PALETTE: [[u8; 3]; 4] = [[0, 0, 0], [220, 30, 30], [30, 60, 220], [40, 200, 60]];
    let raw: Vec<u8> = mask
        .labels
        .iter()
        .flat_map(|&v| PALETTE[usize::from(v.min(3))])
        .collect();
    encode_png(&raw, mask.width, mask.height, image::ExtendedColorType::Rgb8)
}

pub fn encode_rgb_png(img: &RgbImage) -> Vec<u8> {
    encode_png(&img.data, img.width, img.height, image::ExtendedColorType::Rgb8)
}

fn encode_png(raw: &[u8], w: usize, h: usize, color: image::ExtendedColorType) -> Vec<u8> {
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(Cursor::new(&mut buf))
        .write_image(raw, w as u32, h as u32, color)
        .expect("in-memory PNG encoding of a validated buffer");
    buf
}

pub fn save_mask(path: impl AsRef<Path>, mask: &LabelMask) -> std::io::Result<()> {
    std::fs::write(path, encode_mask_png(mask))
}

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage, RasterError> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|source| RasterError::Image {
        path: path.display().to_string(),
        source,
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    RgbImage::new(w, h, rgb.into_raw())
}

pub fn save_rgb(path: impl AsRef<Path>, img: &RgbImage) -> std::io::Result<()> {
    std::fs::write(path, encode_rgb_png(img))
}

/// Split an A/V mask into binary artery and vein masks. Crossings land in both.
pub fn split_av(mask: &LabelMask) -> Result<(LabelMask, LabelMask), RasterError> {
    mask.require(LabelScheme::Av4)?;
    let pick = |want: u8| LabelMask {
        width: mask.width,
        height: mask.height,
        scheme: LabelScheme::Binary,
        labels: mask
            .labels
            .iter()
            .map(|&v| u8::from(v == want || v == AV_CROSSING))
            .collect(),
    };
    Ok((pick(AV_ARTERY), pick(AV_VEIN)))
}

/// Inverse of [`split_av`]: overlap becomes a crossing.
pub fn merge_av(artery: &LabelMask, vein: &LabelMask) -> Result<LabelMask, RasterError> {
    artery.require_binary()?;
    vein.require_binary()?;
    artery.same_dims(vein)?;
    let labels = artery
        .labels
        .iter()
        .zip(&vein.labels)
        .map(|(&a, &v)| match (a != 0, v != 0) {
            (true, true) => AV_CROSSING,
            (true, false) => AV_ARTERY,
            (false, true) => AV_VEIN,
            (false, false) => AV_BACKGROUND,
        })
        .collect();
    Ok(LabelMask {
        width: artery.width,
        height: artery.height,
        scheme: LabelScheme::Av4,
        labels,
    })
}
