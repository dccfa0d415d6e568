//! Heatmap colorization, alpha blending and binary PPM output.

use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::dim(format!("image dims {width}×{height}")));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::dim(format!("{} bytes for a {width}×{height} RGB image", pixels.len())));
        }
        Ok(RgbImage { width, height, pixels })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::new(width, height, rgb.repeat(width * height))
    }

    /// Gray image from an `H×W` tensor with values in [0, 1].
    pub fn from_gray(frame: &Tensor) -> Result<Self> {
        let &[h, w] = frame.dims() else {
            return Err(Error::dim(format!("frame must be H×W, got {:?}", frame.dims())));
        };
        let px = frame.data().iter().flat_map(|&v| [to_byte(v as f64 * 255.0); 3]).collect();
        Self::new(w, h, px)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }
}

pub const STOPS: [(f64, [u8; 3]); 5] = [
    (0.0, [0, 0, 255]),
    (0.25, [0, 255, 255]),
    (0.5, [0, 255, 0]),
    (0.75, [255, 255, 0]),
    (1.0, [255, 0, 0]),
];

fn to_byte(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Color of a saliency value; inputs are clamped to [0, 1].
pub fn color_of(v: f64) -> [u8; 3] {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    let k = STOPS.windows(2).position(|w| v <= w[1].0).unwrap_or(STOPS.len() - 2);
    let ((a, ca), (b, cb)) = (STOPS[k], STOPS[k + 1]);
    let f = (v - a) / (b - a);
    std::array::from_fn(|c| to_byte(ca[c] as f64 + (cb[c] as f64 - ca[c] as f64) * f))
}

/// Maps an `H×W` saliency frame through the colormap.
pub fn colorize(frame: &Tensor) -> Result<RgbImage> {
    let &[h, w] = frame.dims() else {
        return Err(Error::dim(format!("frame must be H×W, got {:?}", frame.dims())));
    };
    RgbImage::new(w, h, frame.data().iter().flat_map(|&v| color_of(v as f64)).collect())
}

/// Per-channel `round(alpha·heat + (1−alpha)·frame)`.
pub fn overlay(frame: &RgbImage, heat: &RgbImage, alpha: f64) -> Result<RgbImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    if frame.width != heat.width || frame.height != heat.height {
        return Err(Error::dim(format!(
            "frame {}×{} vs heat {}×{}",
            frame.width, frame.height, heat.width, heat.height
        )));
    }
    let px = frame
        .pixels
        .iter()
        .zip(&heat.pixels)
        .map(|(&f, &h)| to_byte(alpha * h as f64 + (1.0 - alpha) * f as f64))
        .collect();
    RgbImage::new(frame.width, frame.height, px)
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

/// Parses the binary P6 layout written by [`encode_ppm`], comments excluded.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage, FormatError> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FormatError::Header("truncated PPM header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| FormatError::Header("non-ASCII header".into()))?);
    }
    if fields[0] != "P6" {
        return Err(FormatError::Header(format!("expected P6, found {:?}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| FormatError::Header(format!("bad header field {s:?}")));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(FormatError::Header(format!("max value {max}, only 255 supported")));
    }
    pos += 1;
    let needed = w * h * 3;
    let body = bytes.get(pos..).unwrap_or_default();
    if body.len() < needed {
        return Err(FormatError::Truncated { needed, found: body.len() });
    }
    if body.len() > needed {
        return Err(FormatError::TrailingBytes(body.len() - needed));
    }
    RgbImage::new(w, h, body.to_vec()).map_err(|e| FormatError::Header(e.to_string()))
}

pub fn write_ppm(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(img)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| Error::format(path, e))
}

pub fn overlay_name(clip_id: &str, frame: usize) -> String {
    format!("{clip_id}_f{frame}_overlay.ppm")
}
