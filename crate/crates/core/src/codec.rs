//! Wire encoding: PNG/JPEG bytes, base64 text, and the server-side resize.
//!
//! The client only ever quantizes and encodes. Resizing happens on the
//! server after decoding, so perturbations are always applied at the
//! resolution the attacker actually controls.

use std::fmt;
use std::io::Cursor;
use std::str::FromStr;

use base64::Engine as _;
use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use thiserror::Error;

use crate::tensor::{ImageTensor, QuantizedImage};

pub const DEFAULT_JPEG_QUALITY: u8 = 90;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("unsupported image format: {0}")]
    FormatUnsupported(String),
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("cannot encode image: {0}")]
    Encode(String),
    #[error("invalid base64: {0}")]
    Base64(#[from] base64::DecodeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImageFormatKind {
    Png,
    Jpeg,
}

impl fmt::Display for ImageFormatKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ImageFormatKind::Png => f.write_str("png"),
            ImageFormatKind::Jpeg => f.write_str("jpeg"),
        }
    }
}

impl FromStr for ImageFormatKind {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "png" => Ok(Self::Png),
            "jpeg" | "jpg" => Ok(Self::Jpeg),
            other => Err(CodecError::FormatUnsupported(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub format: ImageFormatKind,
    pub bytes: Vec<u8>,
    /// Only meaningful for JPEG.
    pub quality: u8,
}

fn color_type(channels: usize) -> Result<ExtendedColorType, CodecError> {
    match channels {
        1 => Ok(ExtendedColorType::L8),
        3 => Ok(ExtendedColorType::Rgb8),
        4 => Ok(ExtendedColorType::Rgba8),
        n => Err(CodecError::FormatUnsupported(format!("{n}-channel image"))),
    }
}

pub fn encode_image(
    q: &QuantizedImage,
    format: ImageFormatKind,
    quality: u8,
) -> Result<EncodedImage, CodecError> {
    let (w, h) = (q.width() as u32, q.height() as u32);
    let color = color_type(q.channels())?;
    let mut bytes = Vec::new();
    match format {
        ImageFormatKind::Png => PngEncoder::new(&mut bytes)
            .write_image(q.data(), w, h, color)
            .map_err(|e| CodecError::Encode(e.to_string()))?,
        ImageFormatKind::Jpeg => {
            if !(1..=100).contains(&quality) {
                return Err(CodecError::Encode(format!(
                    "jpeg quality {quality} outside 1..=100"
                )));
            }
            JpegEncoder::new_with_quality(&mut bytes, quality)
                .write_image(q.data(), w, h, color)
                .map_err(|e| CodecError::Encode(e.to_string()))?
        }
    }
    Ok(EncodedImage {
        format,
        bytes,
        quality,
    })
}

pub fn encode_png(q: &QuantizedImage) -> Result<Vec<u8>, CodecError> {
    encode_image(q, ImageFormatKind::Png, 0).map(|e| e.bytes)
}

/// Sniffs PNG/JPEG magic bytes.
pub fn sniff_format(bytes: &[u8]) -> Option<ImageFormatKind> {
    match image::guess_format(bytes).ok()? {
        ImageFormat::Png => Some(ImageFormatKind::Png),
        ImageFormat::Jpeg => Some(ImageFormatKind::Jpeg),
        _ => None,
    }
}

/// Decodes PNG or JPEG into an RGB image. Grayscale expands to three
/// channels and alpha is dropped.
pub fn decode_image(bytes: &[u8]) -> Result<QuantizedImage, CodecError> {
    let format = match sniff_format(bytes) {
        Some(ImageFormatKind::Png) => ImageFormat::Png,
        Some(ImageFormatKind::Jpeg) => ImageFormat::Jpeg,
        None => return Err(CodecError::Decode("not a PNG or JPEG stream".into())),
    };
    let img =
        image::load(Cursor::new(bytes), format).map_err(|e| CodecError::Decode(e.to_string()))?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    QuantizedImage::new(h as usize, w as usize, 3, rgb.into_raw())
        .map_err(|e| CodecError::Decode(e.to_string()))
}

pub fn base64_encode(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

pub fn base64_decode(text: &str) -> Result<Vec<u8>, CodecError> {
    Ok(base64::engine::general_purpose::STANDARD.decode(text)?)
}

/// Bilinear resize with half-pixel centers (align-corners false).
///
/// Source coordinate for output index `d` is `(d + 0.5) * in / out - 0.5`,
/// clamped to `[0, in - 1]`.
pub fn resize_bilinear(x: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    assert!(out_h >= 1 && out_w >= 1, "output size must be positive");
    let (in_h, in_w, c) = (x.height(), x.width(), x.channels());
    if in_h == out_h && in_w == out_w {
        return x.clone();
    }
    let rows = axis_taps(in_h, out_h);
    let cols = axis_taps(in_w, out_w);
    let src = x.data();
    let mut data = Vec::with_capacity(out_h * out_w * c);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            for ch in 0..c {
                let p00 = src[(r0 * in_w + c0) * c + ch];
                let p01 = src[(r0 * in_w + c1) * c + ch];
                let p10 = src[(r1 * in_w + c0) * c + ch];
                let p11 = src[(r1 * in_w + c1) * c + ch];
                let top = p00 + (p01 - p00) * fc;
                let bottom = p10 + (p11 - p10) * fc;
                data.push((top + (bottom - top) * fr).clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(out_h, out_w, c, data).expect("resize preserves shape invariants")
}

/// Per output index: (lower source index, upper source index, blend weight).
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    let last = (input - 1) as f64;
    (0..output)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}
