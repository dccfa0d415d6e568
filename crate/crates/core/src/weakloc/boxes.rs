use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned pixel rectangle; `x` indexes columns. `x0, y0` are inclusive,
/// `x1, y1` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[i64; 4]", into = "[i64; 4]")]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl TryFrom<[i64; 4]> for BBox {
    type Error = String;

    fn try_from([x0, y0, x1, y1]: [i64; 4]) -> Result<Self, String> {
        if x0 < 0 || y0 < 0 || x0 >= x1 || y0 >= y1 {
            return Err(format!("invalid box [{x0}, {y0}, {x1}, {y1}]"));
        }
        Ok(BBox { x0: x0 as usize, y0: y0 as usize, x1: x1 as usize, y1: y1 as usize })
    }
}

impl From<BBox> for [i64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0 as i64, b.y0 as i64, b.x1 as i64, b.y1 as i64]
    }
}

impl BBox {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Result<Self> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::arg(format!("empty box ({x0}, {y0}, {x1}, {y1})")));
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn intersection(&self, other: &BBox) -> usize {
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        w * h
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x1 <= width && self.y1 <= height
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection(b);
    inter as f64 / (a.area() + b.area() - inter) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    #[serde(rename = "4")]
    Four,
    #[default]
    #[serde(rename = "8")]
    Eight,
}

/// Single-channel `H×W` map in 64-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::dim(format!("{} values for a {height}×{width} frame", data.len())));
        }
        Ok(Frame { height, width, data })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.dims() {
            &[h, w] => Frame::new(h, w, t.to_f64()),
            d => Err(Error::dim(format!("frame must be H×W, got {d:?}"))),
        }
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// First maximum in row-major order, as `(x, y)`.
    pub fn peak(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }
}

/// Splits a `T×H×W` saliency volume into frames divided by its global max.
/// A volume with no positive value yields all-zero frames.
pub fn normalized_frames(volume: &Tensor) -> Result<Vec<Frame>> {
    let &[t, h, w] = volume.dims() else {
        return Err(Error::dim(format!("saliency must be T×H×W, got {:?}", volume.dims())));
    };
    let data = volume.to_f64();
    let m = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = if m > 0.0 { data.iter().map(|&v| (v / m).max(0.0)).collect() } else { vec![0.0; data.len()] };
    (0..t).map(|f| Frame::new(h, w, scaled[f * h * w..(f + 1) * h * w].to_vec())).collect()
}

/// Tightest box around each connected component of `{v ≥ tau}`, in order of
/// each component's first pixel. A frame without positive values has none.
pub fn boxes_at_threshold(frame: &Frame, tau: f64, conn: Connectivity) -> Vec<BBox> {
    if !(frame.max() > 0.0) {
        return Vec::new();
    }
    let (h, w) = (frame.height, frame.width);
    let on: Vec<bool> = frame.data.iter().map(|&v| v >= tau).collect();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if !on[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if (dx == 0 && dy == 0) || (conn == Connectivity::Four && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if on[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        out.push(BBox { x0, y0, x1, y1 });
    }
    out
}
