//! Linear, bilinear and trilinear interpolation, corner-aligned volume and
//! image upsampling, and an optional separable Gaussian refinement.
//!
//! Upsampling maps output index `i` on an axis of `n_out > 1` samples to the
//! source coordinate `i * (n_in - 1) / (n_out - 1)`, so the first and last
//! samples land exactly on the source endpoints. A single output sample maps
//! to coordinate 0 and a single source sample is replicated.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Two samples at the ends of the unit interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners1 {
    pub v0: f64,
    pub v1: f64,
}

/// Four samples at the unit square corners; `v[i][j]` sits at `(i, j)` with
/// `i` along the first axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners2 {
    pub v: [[f64; 2]; 2],
}

/// Eight samples at the unit cube corners, `v[p][q][r]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corners3 {
    pub v: [[[f64; 2]; 2]; 2],
}

impl Corners2 {
    pub fn new(v00: f64, v10: f64, v01: f64, v11: f64) -> Self {
        Corners2 { v: [[v00, v01], [v10, v11]] }
    }
}

impl Corners3 {
    pub fn splat(c: f64) -> Self {
        Corners3 { v: [[[c; 2]; 2]; 2] }
    }

    /// Face at `r = 0` (front) or `r = 1` (back).
    pub fn face(&self, r: usize) -> Corners2 {
        let v = &self.v;
        Corners2 { v: [[v[0][0][r], v[0][1][r]], [v[1][0][r], v[1][1][r]]] }
    }
}

/// How the interpolated fields are brought to the target resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpsampleSpec {
    /// Standard deviation of the optional Gaussian refinement, in output voxels.
    /// Zero disables it.
    pub gaussian_sigma: f64,
}

impl Default for UpsampleSpec {
    fn default() -> Self {
        UpsampleSpec { gaussian_sigma: 0.0 }
    }
}

fn check_weight(a: f64) -> Result<()> {
    if (0.0..=1.0).contains(&a) {
        Ok(())
    } else {
        Err(Error::Domain(format!("interpolation weight {a} outside [0, 1]")))
    }
}

#[inline]
fn lerp_raw(v0: f64, v1: f64, a: f64) -> f64 {
    v0 * (1.0 - a) + v1 * a
}

#[inline]
fn bilerp_raw(c: &[[f64; 2]; 2], a1: f64, a2: f64) -> f64 {
    lerp_raw(c[0][0], c[1][0], a1) * (1.0 - a2) + lerp_raw(c[0][1], c[1][1], a1) * a2
}

#[inline]
fn trilerp_raw(c: &[[[f64; 2]; 2]; 2], a1: f64, a2: f64, a3: f64) -> f64 {
    let front = [[c[0][0][0], c[0][1][0]], [c[1][0][0], c[1][1][0]]];
    let back = [[c[0][0][1], c[0][1][1]], [c[1][0][1], c[1][1][1]]];
    bilerp_raw(&front, a1, a2) * (1.0 - a3) + bilerp_raw(&back, a1, a2) * a3
}

pub fn lerp(v0: f64, v1: f64, a: f64) -> Result<f64> {
    check_weight(a)?;
    Ok(lerp_raw(v0, v1, a))
}

pub fn bilerp(corners: &Corners2, a1: f64, a2: f64) -> Result<f64> {
    check_weight(a1)?;
    check_weight(a2)?;
    Ok(bilerp_raw(&corners.v, a1, a2))
}

pub fn trilerp(corners: &Corners3, a1: f64, a2: f64, a3: f64) -> Result<f64> {
    check_weight(a1)?;
    check_weight(a2)?;
    check_weight(a3)?;
    Ok(trilerp_raw(&corners.v, a1, a2, a3))
}

/// Source cell for each output index on one axis: `(lower, upper, weight)`.
pub(crate) fn axis_samples(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    (0..n_out)
        .map(|i| {
            if n_in == 1 || n_out == 1 {
                return (0, 0, 0.0);
            }
            let coord = (i * (n_in - 1)) as f64 / (n_out - 1) as f64;
            let lo = (coord.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            let w = if hi == lo { 0.0 } else { coord - lo as f64 };
            (lo, hi, w)
        })
        .collect()
}

fn check_target(target: &[usize]) -> Result<()> {
    if target.iter().any(|&d| d == 0) {
        return Err(Error::dim(format!("target extents must be >= 1, got {target:?}")));
    }
    Ok(())
}

/// Corner-aligned trilinear resampling of a `T×H×W` volume.
pub fn upsample_trilinear(vol: &Tensor, target: [usize; 3]) -> Result<Tensor> {
    if vol.rank() != 3 {
        return Err(Error::dim(format!("upsample_trilinear expects rank 3, got {:?}", vol.dims())));
    }
    check_target(&target)?;
    let [t_in, h_in, w_in] = [vol.dims()[0], vol.dims()[1], vol.dims()[2]];
    if [t_in, h_in, w_in] == target {
        return Ok(vol.clone());
    }
    let st = axis_samples(t_in, target[0]);
    let sh = axis_samples(h_in, target[1]);
    let sw = axis_samples(w_in, target[2]);
    let src = vol.data();
    let at = |t: usize, h: usize, w: usize| src[(t * h_in + h) * w_in + w] as f64;
    let mut out = Vec::with_capacity(target.iter().product());
    for &(t0, t1, a_t) in &st {
        for &(h0, h1, a_h) in &sh {
            for &(w0, w1, a_w) in &sw {
                // Weight order follows the cube corners: first axis is W, then H, then T.
                let c = [
                    [[at(t0, h0, w0), at(t1, h0, w0)], [at(t0, h1, w0), at(t1, h1, w0)]],
                    [[at(t0, h0, w1), at(t1, h0, w1)], [at(t0, h1, w1), at(t1, h1, w1)]],
                ];
                out.push(trilerp_raw(&c, a_w, a_h, a_t) as f32);
            }
        }
    }
    Tensor::from_vec(&target, out)
}

/// Corner-aligned bilinear resampling of an `H×W` image.
pub fn upsample_bilinear(img: &Tensor, target: [usize; 2]) -> Result<Tensor> {
    if img.rank() != 2 {
        return Err(Error::dim(format!("upsample_bilinear expects rank 2, got {:?}", img.dims())));
    }
    check_target(&target)?;
    let [h_in, w_in] = [img.dims()[0], img.dims()[1]];
    if [h_in, w_in] == target {
        return Ok(img.clone());
    }
    let sh = axis_samples(h_in, target[0]);
    let sw = axis_samples(w_in, target[1]);
    let src = img.data();
    let at = |h: usize, w: usize| src[h * w_in + w] as f64;
    let mut out = Vec::with_capacity(target[0] * target[1]);
    for &(h0, h1, a_h) in &sh {
        for &(w0, w1, a_w) in &sw {
            let c = [[at(h0, w0), at(h1, w0)], [at(h0, w1), at(h1, w1)]];
            out.push(bilerp_raw(&c, a_w, a_h) as f32);
        }
    }
    Tensor::from_vec(&target, out)
}

/// Normalized 1-D Gaussian taps with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Half-sample symmetric reflection of `i` into `[0, n)`.
pub fn reflect_index(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

/// Separable Gaussian blur over every axis with reflected boundaries.
pub fn gaussian_refine(vol: &Tensor, sigma: f64) -> Result<Tensor> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Domain(format!("gaussian sigma must be finite and >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(vol.clone());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let dims = vol.dims().to_vec();
    let mut cur = vol.to_f64();
    let mut next = vec![0f64; cur.len()];
    for axis in 0..dims.len() {
        let n = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        let outer: usize = dims[..axis].iter().product();
        for o in 0..outer {
            for s in 0..inner {
                let base = o * n * inner + s;
                for i in 0..n {
                    let mut acc = 0.0;
                    for (k, &w) in kernel.iter().enumerate() {
                        let j = reflect_index(i as i64 + k as i64 - radius, n);
                        acc += w * cur[base + j * inner];
                    }
                    next[base + i * inner] = acc;
                }
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    Tensor::from_f64(&dims, &cur)
}
