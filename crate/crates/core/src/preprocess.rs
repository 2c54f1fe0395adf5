//! Turning face images into the model's `50×50×1` input.
//!
//! Pipeline: grayscale (BT.601 luma) → pose normalization at source
//! resolution → corner-aligned bilinear resize → scale to `[0, 1]`.
//!
//! Pose normalization rotates the image about its center so that the line
//! through the two eye centers becomes horizontal, but never by more than
//! `max_rotation_deg`. Landmarks come from outside (a CSV or the command
//! line); no detector runs here.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageDecoder, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::INPUT_SHAPE;
use crate::tensor::Tensor;

/// 8-bit image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl RawImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("image size {width}×{height} is empty")));
        }
        if width * height * channels != data.len() {
            return Err(Error::Dimension(format!(
                "{width}×{height}×{channels} image needs {} bytes, got {}",
                width * height * channels,
                data.len()
            )));
        }
        Ok(RawImage {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        RawImage::new(width, height, 1, data)
    }

    pub fn pixel(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Eye centers in image coordinates (y grows downward). `left` is the eye
/// on the image's left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EyePair {
    pub left: Point,
    pub right: Point,
}

impl EyePair {
    pub fn new(lx: f64, ly: f64, rx: f64, ry: f64) -> Self {
        EyePair {
            left: Point { x: lx, y: ly },
            right: Point { x: rx, y: ry },
        }
    }

    /// Angle of the eye line in degrees, `atan2(Δy, Δx)`.
    pub fn angle_deg(&self) -> f64 {
        (self.right.y - self.left.y)
            .atan2(self.right.x - self.left.x)
            .to_degrees()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BorderFill {
    EdgeReplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    pub target_size: [usize; 2],
    pub max_rotation_deg: f64,
    pub luma_weights: [f64; 3],
    pub border_fill: BorderFill,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_size: [INPUT_SHAPE[0], INPUT_SHAPE[1]],
            max_rotation_deg: 10.0,
            luma_weights: [0.299, 0.587, 0.114],
            border_fill: BorderFill::EdgeReplicate,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_rotation_deg > 0.0) || !self.max_rotation_deg.is_finite() {
            return Err(Error::Config(format!(
                "preprocess.max_rotation_deg must be positive, got {}",
                self.max_rotation_deg
            )));
        }
        if self.target_size != [INPUT_SHAPE[0], INPUT_SHAPE[1]] {
            return Err(Error::Config(format!(
                "preprocess.target_size must be [50, 50], got {:?}",
                self.target_size
            )));
        }
        Ok(())
    }
}

/// BT.601 luma for 3-channel images; 1-channel images pass through.
pub fn to_grayscale(img: &RawImage, cfg: &PreprocessConfig) -> Result<RawImage> {
    match img.channels {
        1 => Ok(img.clone()),
        3 => {
            let [wr, wg, wb] = cfg.luma_weights;
            let data = img
                .data
                .chunks_exact(3)
                .map(|p| {
                    let y = wr * p[0] as f64 + wg * p[1] as f64 + wb * p[2] as f64;
                    y.round().clamp(0.0, 255.0) as u8
                })
                .collect();
            RawImage::gray(img.width, img.height, data)
        }
        c => Err(Error::Format(format!("unsupported channel count {c}"))),
    }
}

/// Bilinear sample at a fractional position; coordinates outside the image
/// are clamped to the nearest edge pixel.
fn sample(img: &RawImage, x: f64, y: f64, c: usize) -> f64 {
    let x = x.clamp(0.0, (img.width - 1) as f64);
    let y = y.clamp(0.0, (img.height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p = |xx, yy| img.pixel(xx, yy, c) as f64;
    let top = (1.0 - fx) * p(x0, y0) + fx * p(x1, y0);
    let bottom = (1.0 - fx) * p(x0, y1) + fx * p(x1, y1);
    (1.0 - fy) * top + fy * bottom
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Result of [`pose_normalize`].
#[derive(Debug, Clone, PartialEq)]
pub struct Aligned {
    pub image: RawImage,
    /// Eye-line angle before rotation.
    pub measured_deg: f64,
    /// Clamped angle actually removed; the image was rotated by its negation.
    pub applied_deg: f64,
}

/// Where a source point lands after rotating the image by `-applied_deg`
/// about its center.
pub fn rotate_point(p: Point, width: usize, height: usize, applied_deg: f64) -> Point {
    let (cx, cy) = ((width - 1) as f64 / 2.0, (height - 1) as f64 / 2.0);
    let (s, c) = (-applied_deg.to_radians()).sin_cos();
    let (u, v) = (p.x - cx, p.y - cy);
    Point {
        x: cx + c * u - s * v,
        y: cy + s * u + c * v,
    }
}

pub fn pose_normalize(img: &RawImage, eyes: &EyePair, cfg: &PreprocessConfig) -> Result<Aligned> {
    let inside = |p: &Point| {
        p.x >= 0.0 && p.y >= 0.0 && p.x < img.width as f64 && p.y < img.height as f64
    };
    if !inside(&eyes.left) || !inside(&eyes.right) {
        return Err(Error::Landmark(format!(
            "eyes {:?}/{:?} outside {}×{} image",
            eyes.left, eyes.right, img.width, img.height
        )));
    }
    if eyes.left.x >= eyes.right.x {
        return Err(Error::Landmark(format!(
            "left eye x {} must be smaller than right eye x {}",
            eyes.left.x, eyes.right.x
        )));
    }
    let measured = eyes.angle_deg();
    let applied = measured.clamp(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    if applied == 0.0 {
        return Ok(Aligned {
            image: img.clone(),
            measured_deg: measured,
            applied_deg: 0.0,
        });
    }

    // Inverse mapping: output pixel p' samples source c + R(applied)(p' − c).
    let (cx, cy) = ((img.width - 1) as f64 / 2.0, (img.height - 1) as f64 / 2.0);
    let (s, c) = applied.to_radians().sin_cos();
    let mut data = Vec::with_capacity(img.data.len());
    for y in 0..img.height {
        for x in 0..img.width {
            let (u, v) = (x as f64 - cx, y as f64 - cy);
            let sx = cx + c * u - s * v;
            let sy = cy + s * u + c * v;
            for ch in 0..img.channels {
                data.push(to_u8(sample(img, sx, sy, ch)));
            }
        }
    }
    Ok(Aligned {
        image: RawImage::new(img.width, img.height, img.channels, data)?,
        measured_deg: measured,
        applied_deg: applied,
    })
}

/// Bilinear resize on a corner-aligned grid: output corners sample input
/// corners exactly.
pub fn resize_bilinear(img: &RawImage, width: usize, height: usize) -> Result<RawImage> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!("target size {width}×{height} is empty")));
    }
    let coord = |i: usize, out: usize, src: usize| {
        if out == 1 {
            (src - 1) as f64 / 2.0
        } else {
            i as f64 * (src - 1) as f64 / (out - 1) as f64
        }
    };
    let mut data = Vec::with_capacity(width * height * img.channels);
    for y in 0..height {
        let sy = coord(y, height, img.height);
        for x in 0..width {
            let sx = coord(x, width, img.width);
            for ch in 0..img.channels {
                data.push(to_u8(sample(img, sx, sy, ch)));
            }
        }
    }
    RawImage::new(width, height, img.channels, data)
}

/// `value / 255` into a `50×50×1` tensor.
pub fn normalize_pixels(img: &RawImage) -> Result<Tensor> {
    if img.width != INPUT_SHAPE[1] || img.height != INPUT_SHAPE[0] || img.channels != 1 {
        return Err(Error::Dimension(format!(
            "expected a 50×50 single-channel image, got {}×{}×{}",
            img.width, img.height, img.channels
        )));
    }
    Tensor::new(
        INPUT_SHAPE.to_vec(),
        img.data.iter().map(|&v| v as f64 / 255.0).collect(),
    )
}

/// Outcome of the full pipeline for one image.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub input: Tensor,
    pub applied_deg: f64,
}

/// Full pipeline. Without eyes no rotation is attempted.
pub fn preprocess(img: &RawImage, eyes: Option<&EyePair>, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    let gray = to_grayscale(img, cfg)?;
    let (aligned, applied_deg) = match eyes {
        Some(e) => {
            let a = pose_normalize(&gray, e, cfg)?;
            (a.image, a.applied_deg)
        }
        None => (gray, 0.0),
    };
    let [h, w] = cfg.target_size;
    let resized = resize_bilinear(&aligned, w, h)?;
    Ok(Preprocessed {
        input: normalize_pixels(&resized)?,
        applied_deg,
    })
}

/// Decodes a binary PGM (P5) or PPM (P6) with maxval 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<RawImage> {
    if bytes.len() < 2 || !(bytes.starts_with(b"P5") || bytes.starts_with(b"P6")) {
        return Err(Error::Format("only binary PGM (P5) and PPM (P6) images are supported".into()));
    }
    let fmt_err = |e: image::ImageError| Error::Format(format!("bad PNM data: {e}"));
    let (_, header) = PnmDecoder::new(Cursor::new(bytes)).map_err(fmt_err)?.into_inner();
    if header.maximal_sample() != 255 {
        return Err(Error::Format(format!(
            "maxval must be 255, got {}",
            header.maximal_sample()
        )));
    }
    let decoder = PnmDecoder::new(Cursor::new(bytes)).map_err(fmt_err)?;
    let (w, h) = decoder.dimensions();
    let channels = match decoder.color_type() {
        image::ColorType::L8 => 1,
        image::ColorType::Rgb8 => 3,
        other => return Err(Error::Format(format!("unsupported PNM color type {other:?}"))),
    };
    let mut data = vec![0u8; decoder.total_bytes() as usize];
    decoder.read_image(&mut data).map_err(fmt_err)?;
    RawImage::new(w as usize, h as usize, channels, data)
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<RawImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn encode_pnm(img: &RawImage) -> Result<Vec<u8>> {
    let (subtype, color) = match img.channels {
        1 => (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8),
        3 => (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8),
        c => return Err(Error::Format(format!("cannot write {c}-channel image as PNM"))),
    };
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(subtype)
        .write_image(&img.data, img.width as u32, img.height as u32, color)
        .map_err(|e| Error::Format(format!("PNM encoding failed: {e}")))?;
    Ok(out)
}

pub fn write_pnm(img: &RawImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pnm(img)?).map_err(|e| Error::io(path, e))
}
