//! Grayscale image planes, resampling and the two face-cropping geometries.
//!
//! All intensities live in the integer range `[0, 255]`. Interpolation is done
//! in `f64` and rounded half-up, so outputs are bit-exact across platforms.

use std::path::Path;

use image::{DynamicImage, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Height of every cropped face fed to the texture pipeline.
pub const FACE_HEIGHT: usize = 120;
/// Width of every cropped face fed to the texture pipeline.
pub const FACE_WIDTH: usize = 100;

/// Expansion applied to detector boxes before cropping.
pub const DEFAULT_EXPAND_RATIO: f64 = 1.1;

/// Row-major 8-bit grayscale plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// Pixel at row `y`, column `x`.
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Pixel with coordinates clamped into the image (replicate padding).
    #[inline]
    pub fn get_clamped(&self, y: isize, x: isize) -> u8 {
        let y = y.clamp(0, self.height as isize - 1) as usize;
        let x = x.clamp(0, self.width as isize - 1) as usize;
        self.get(y, x)
    }

    /// Mirror the image about its vertical axis.
    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, |y, x| {
            self.get(y, self.width - 1 - x)
        })
    }

    /// Copy out an integer sub-rectangle. The rectangle must lie inside the image.
    pub fn sub_image(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Geometry(format!(
                "sub-image ({x0},{y0},{w}x{h}) outside {}x{} image",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(h, w, |y, x| self.get(y0 + y, x0 + x)))
    }
}

/// Three aligned 8-bit channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbPlanes {
    pub height: usize,
    pub width: usize,
    pub r: Vec<u8>,
    pub g: Vec<u8>,
    pub b: Vec<u8>,
}

/// ITU-R BT.601 luma, rounded half-up.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let y = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
    round_half_up(y)
}

#[inline]
pub(crate) fn round_half_up(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn to_grayscale(rgb: &RgbPlanes) -> Result<GrayImage> {
    let n = rgb.height * rgb.width;
    if rgb.r.len() != n || rgb.g.len() != n || rgb.b.len() != n {
        return Err(Error::Dimension(format!(
            "channel lengths {}/{}/{} do not match {}x{}",
            rgb.r.len(),
            rgb.g.len(),
            rgb.b.len(),
            rgb.height,
            rgb.width
        )));
    }
    let data = (0..n).map(|i| luma(rgb.r[i], rgb.g[i], rgb.b[i])).collect();
    GrayImage::new(rgb.height, rgb.width, data)
}

/// Bilinear resampling with corner-aligned sampling: output pixel `i` maps to
/// source coordinate `i * (in - 1) / (out - 1)` (0 when `out == 1`).
pub fn resize_bilinear(img: &GrayImage, out_h: usize, out_w: usize) -> Result<GrayImage> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Dimension(format!(
            "target size {out_h}x{out_w} has a zero dimension"
        )));
    }
    if img.height == 0 || img.width == 0 {
        return Err(Error::Dimension("source image is empty".into()));
    }
    if out_h == img.height && out_w == img.width {
        return Ok(img.clone());
    }
    let map = |i: usize, n_in: usize, n_out: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let s = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let i0 = (s.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, s - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| map(x, img.width, out_w)).collect();
    let mut data = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = map(y, img.height, out_h);
        for &(x0, x1, fx) in &cols {
            let top = f64::from(img.get(y0, x0)) * (1.0 - fx) + f64::from(img.get(y0, x1)) * fx;
            let bot = f64::from(img.get(y1, x0)) * (1.0 - fx) + f64::from(img.get(y1, x1)) * fx;
            data.push(round_half_up(top * (1.0 - fy) + bot * fy));
        }
    }
    GrayImage::new(out_h, out_w, data)
}

/// Axis-aligned box in pixel units; `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(Error::Geometry(format!(
                "box ({x},{y},{w}x{h}) must have positive finite extent"
            )));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    /// Intersection over union; zero for disjoint boxes.
    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        if ix <= 0.0 || iy <= 0.0 {
            return 0.0;
        }
        let inter = ix * iy;
        inter / (self.area() + other.area() - inter)
    }

    /// The box scaled about its center.
    pub fn scaled(&self, ratio: f64) -> BoundingBox {
        let (cx, cy) = self.center();
        let (w, h) = (self.w * ratio, self.h * ratio);
        BoundingBox {
            x: cx - w / 2.0,
            y: cy - h / 2.0,
            w,
            h,
        }
    }
}

/// Integer pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelRect {
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
}

/// Round the box corners half-up and clamp them to the image.
fn clamp_to_image(b: &BoundingBox, height: usize, width: usize) -> Result<PixelRect> {
    let r = |v: f64| (v + 0.5).floor();
    let x0 = r(b.x).max(0.0);
    let y0 = r(b.y).max(0.0);
    let x1 = r(b.x + b.w).min(width as f64);
    let y1 = r(b.y + b.h).min(height as f64);
    if x1 <= x0 || y1 <= y0 {
        return Err(Error::Geometry(format!(
            "box ({:.2},{:.2},{:.2}x{:.2}) does not intersect the {height}x{width} image",
            b.x, b.y, b.w, b.h
        )));
    }
    Ok(PixelRect {
        x0: x0 as usize,
        y0: y0 as usize,
        x1: x1 as usize,
        y1: y1 as usize,
    })
}

/// Pixel rectangle used by [`crop_expanded`], before resizing.
pub fn expanded_rect(
    height: usize,
    width: usize,
    bbox: &BoundingBox,
    ratio: f64,
) -> Result<PixelRect> {
    if !(ratio >= 1.0) || !ratio.is_finite() {
        return Err(Error::Precondition(format!(
            "expansion ratio {ratio} must be >= 1"
        )));
    }
    clamp_to_image(&bbox.scaled(ratio), height, width)
}

fn crop_rect_to_face(img: &GrayImage, rect: PixelRect) -> Result<GrayImage> {
    let sub = img.sub_image(rect.x0, rect.y0, rect.width(), rect.height())?;
    resize_bilinear(&sub, FACE_HEIGHT, FACE_WIDTH)
}

/// Expand a detector box about its center, clamp, crop and resize to the
/// canonical 120x100 face.
pub fn crop_expanded(img: &GrayImage, bbox: &BoundingBox, ratio: f64) -> Result<GrayImage> {
    let rect = expanded_rect(img.height, img.width, bbox, ratio)?;
    crop_rect_to_face(img, rect)
}

/// Eye-anchored crop geometry: width = `width_factor * D_eye`,
/// height = `aspect * width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeCropSpec {
    pub left_eye: (f64, f64),
    pub right_eye: (f64, f64),
    pub width_factor: f64,
    pub aspect: f64,
}

impl EyeCropSpec {
    /// Fraction of the crop height above the eye line.
    pub const EYE_LINE: f64 = 0.3;

    pub fn new(left_eye: (f64, f64), right_eye: (f64, f64)) -> Self {
        Self {
            left_eye,
            right_eye,
            width_factor: 1.6,
            aspect: 1.2,
        }
    }

    pub fn eye_distance(&self) -> f64 {
        let dx = self.right_eye.0 - self.left_eye.0;
        let dy = self.right_eye.1 - self.left_eye.1;
        dx.hypot(dy)
    }

    /// Crop width and height in whole pixels.
    pub fn crop_size(&self) -> Result<(usize, usize)> {
        let d = self.eye_distance();
        if !(d > 0.0) {
            return Err(Error::Precondition("eye positions coincide".into()));
        }
        if !(self.width_factor > 0.0 && self.aspect > 0.0) {
            return Err(Error::Precondition(
                "width factor and aspect must be positive".into(),
            ));
        }
        let w = self.width_factor * d;
        let h = self.aspect * w;
        let r = |v: f64| (v + 0.5).floor().max(1.0) as usize;
        Ok((r(w), r(h)))
    }

    /// Unclamped crop box.
    pub fn crop_box(&self) -> Result<BoundingBox> {
        let (w, h) = self.crop_size()?;
        let mx = (self.left_eye.0 + self.right_eye.0) / 2.0;
        let my = (self.left_eye.1 + self.right_eye.1) / 2.0;
        let (w, h) = (w as f64, h as f64);
        Ok(BoundingBox {
            x: mx - w / 2.0,
            y: my - Self::EYE_LINE * h,
            w,
            h,
        })
    }
}

pub fn eye_crop_rect(height: usize, width: usize, spec: &EyeCropSpec) -> Result<PixelRect> {
    clamp_to_image(&spec.crop_box()?, height, width)
}

pub fn crop_by_eyes(img: &GrayImage, spec: &EyeCropSpec) -> Result<GrayImage> {
    let rect = eye_crop_rect(img.height, img.width, spec)?;
    crop_rect_to_face(img, rect)
}

/// Load an 8-bit grayscale or 24-bit RGB PNG/PGM/PPM file as grayscale.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let dynamic = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    match dynamic {
        DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            GrayImage::new(h as usize, w as usize, buf.into_raw())
        }
        DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            let raw = buf.into_raw();
            let planes = RgbPlanes {
                height: h as usize,
                width: w as usize,
                r: raw.iter().step_by(3).copied().collect(),
                g: raw.iter().skip(1).step_by(3).copied().collect(),
                b: raw.iter().skip(2).step_by(3).copied().collect(),
            };
            to_grayscale(&planes)
        }
        other => Err(Error::UnsupportedImage {
            path: path.to_path_buf(),
            reason: format!("pixel format {:?} is not 8-bit gray or 24-bit RGB", other.color()),
        }),
    }
}

/// Save as PNG, or binary PGM when the extension is `.pgm`.
pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.data.clone())
        .ok_or_else(|| Error::Dimension("image buffer size mismatch".into()))?;
    let is_pgm = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let res = if is_pgm {
        buf.save_with_format(path, image::ImageFormat::Pnm)
    } else {
        buf.save_with_format(path, image::ImageFormat::Png)
    };
    res.map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}
