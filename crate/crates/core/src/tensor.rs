//! Dense row-major `f32` tensors and the handful of kernels the attribution
//! pipeline needs.
//!
//! Storage is single precision. Every reduction accumulates in `f64` in a
//! fixed index order and rounds once, so results do not depend on how callers
//! schedule work.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest element count accepted by [`Tensor::create`] and the container reader.
pub const DEFAULT_ELEMENT_CAP: usize = 1 << 31;

/// Maximum supported rank.
pub const MAX_RANK: usize = 5;

/// Element type recorded alongside a tensor. Values are always held as `f32`;
/// the tag controls how they are widened when written to a container.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum DType {
    #[default]
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
    dtype: DType,
}

pub(crate) fn checked_len(dims: &[usize], cap: usize) -> Result<usize> {
    if dims.is_empty() || dims.len() > MAX_RANK {
        return Err(Error::dim(format!(
            "rank must be between 1 and {MAX_RANK}, got {}",
            dims.len()
        )));
    }
    let mut len: usize = 1;
    for &d in dims {
        if d == 0 {
            return Err(Error::dim(format!("zero extent in {dims:?}")));
        }
        len = len
            .checked_mul(d)
            .filter(|&n| n <= cap)
            .ok_or_else(|| Error::dim(format!("{dims:?} exceeds the element cap of {cap}")))?;
    }
    Ok(len)
}

impl Tensor {
    /// Tensor of the given extents with every element equal to `fill`.
    pub fn create(dims: &[usize], fill: f32) -> Result<Self> {
        Self::create_capped(dims, fill, DEFAULT_ELEMENT_CAP)
    }

    pub fn create_capped(dims: &[usize], fill: f32, cap: usize) -> Result<Self> {
        if !fill.is_finite() {
            return Err(Error::Domain(format!("fill value {fill} is not finite")));
        }
        let len = checked_len(dims, cap)?;
        Ok(Tensor { dims: dims.to_vec(), data: vec![fill; len], dtype: DType::F32 })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::create(dims, 0.0)
    }

    pub fn from_vec(dims: &[usize], data: Vec<f32>) -> Result<Self> {
        let len = checked_len(dims, DEFAULT_ELEMENT_CAP)?;
        if len != data.len() {
            return Err(Error::dim(format!(
                "dims {dims:?} need {len} elements, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("element {i} is not finite")));
        }
        Ok(Tensor { dims: dims.to_vec(), data, dtype: DType::F32 })
    }

    /// Builds a tensor from `f64` values, rounding each once.
    pub fn from_f64(dims: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(dims, data.iter().map(|&v| v as f32).collect())
    }

    /// Construction for values already known to satisfy the invariants.
    pub(crate) fn from_parts(dims: Vec<usize>, data: Vec<f32>, dtype: DType) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor { dims, data, dtype }
    }

    pub fn with_dtype(mut self, dtype: DType) -> Self {
        self.dtype = dtype;
        self
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    fn require_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::dim(format!(
                "{what} expects a rank-{rank} tensor, got dims {:?}",
                self.dims
            )));
        }
        Ok(())
    }

    /// Row-major flat offset of a multi-index. Panics if out of range.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.dims.len(), "index rank mismatch");
        index.iter().zip(&self.dims).fold(0, |acc, (&i, &d)| {
            assert!(i < d, "index {i} out of range for extent {d}");
            acc * d + i
        })
    }

    pub fn get(&self, index: &[usize]) -> f32 {
        self.data[self.offset(index)]
    }

    /// Same data under new extents with equal element count.
    pub fn reshape(&self, dims: &[usize]) -> Result<Tensor> {
        let len = checked_len(dims, DEFAULT_ELEMENT_CAP)?;
        if len != self.len() {
            return Err(Error::dim(format!("cannot reshape {:?} into {dims:?}", self.dims)));
        }
        Ok(Tensor { dims: dims.to_vec(), data: self.data.clone(), dtype: self.dtype })
    }

    /// Slice `index` along the leading axis, dropping that axis.
    pub fn index_outer(&self, index: usize) -> Result<Tensor> {
        if self.rank() < 2 {
            return Err(Error::dim("index_outer needs rank >= 2"));
        }
        if index >= self.dims[0] {
            return Err(Error::dim(format!(
                "outer index {index} out of range for extent {}",
                self.dims[0]
            )));
        }
        let inner: usize = self.dims[1..].iter().product();
        let data = self.data[index * inner..(index + 1) * inner].to_vec();
        Ok(Tensor { dims: self.dims[1..].to_vec(), data, dtype: self.dtype })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::arg("stack of zero tensors"))?;
        if parts.iter().any(|p| p.dims != first.dims) {
            return Err(Error::dim("stack requires identical dims"));
        }
        let mut dims = vec![parts.len()];
        dims.extend_from_slice(&first.dims);
        checked_len(&dims, DEFAULT_ELEMENT_CAP)?;
        let data = parts.iter().flat_map(|p| p.data.iter().copied()).collect();
        Ok(Tensor { dims, data, dtype: first.dtype })
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { dims: self.dims.clone(), data: self.data.iter().map(|&v| f(v)).collect(), dtype: self.dtype }
    }

    pub fn scale(&self, factor: f32) -> Tensor {
        self.map(|v| v * factor)
    }

    pub fn neg(&self) -> Tensor {
        self.map(|v| -v)
    }

    /// Elementwise sum of two tensors with identical dims.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(Error::dim(format!("add of {:?} and {:?}", self.dims, other.dims)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| ((a as f64) + (b as f64)) as f32).collect();
        Ok(Tensor { dims: self.dims.clone(), data, dtype: self.dtype })
    }

    /// Elementwise product of two tensors with identical dims.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(Error::dim(format!("mul of {:?} and {:?}", self.dims, other.dims)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a * b).collect();
        Ok(Tensor { dims: self.dims.clone(), data, dtype: self.dtype })
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }
}

/// Sums the leading axis of a tensor. Accumulates in `f64` in ascending order.
fn sum_leading(t: &Tensor) -> Tensor {
    let channels = t.dims[0];
    let plane: usize = t.dims[1..].iter().product();
    let mut acc = vec![0f64; plane];
    for c in 0..channels {
        let src = &t.data[c * plane..(c + 1) * plane];
        for (a, &v) in acc.iter_mut().zip(src) {
            *a += v as f64;
        }
    }
    Tensor::from_parts(t.dims[1..].to_vec(), acc.into_iter().map(|v| v as f32).collect(), t.dtype)
}

/// `C×T×H×W → T×H×W`, summing over channels.
pub fn channel_sum(t: &Tensor) -> Result<Tensor> {
    t.require_rank(4, "channel_sum")?;
    Ok(sum_leading(t))
}

/// `C×H×W → H×W`, the image analogue of [`channel_sum`].
pub fn channel_sum_2d(t: &Tensor) -> Result<Tensor> {
    t.require_rank(3, "channel_sum_2d")?;
    Ok(sum_leading(t))
}

pub fn relu_map(t: &Tensor) -> Tensor {
    // -0.0 maps to +0.0 so the output never carries a negative sign bit.
    t.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Global maximum element.
pub fn max_all(t: &Tensor) -> f32 {
    t.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn create_fills() {
        let t = Tensor::create(&[2, 2], 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::create(&[1], 5.0).unwrap();
        assert_eq!(t.data(), &[5.0]);
        let t = Tensor::create(&[2, 3, 4], 1.0).unwrap();
        assert_eq!(t.sum(), 24.0);
    }

    #[test]
    fn create_rejects_bad_dims() {
        assert!(matches!(Tensor::create(&[2, 0], 1.0), Err(Error::Dimension(_))));
        assert!(matches!(Tensor::create(&[], 1.0), Err(Error::Dimension(_))));
        assert!(matches!(Tensor::create(&[1, 1, 1, 1, 1, 1], 1.0), Err(Error::Dimension(_))));
        assert!(matches!(
            Tensor::create_capped(&[1 << 16, 1 << 16], 0.0, DEFAULT_ELEMENT_CAP),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(Tensor::create_capped(&[4, 4], 0.0, 15), Err(Error::Dimension(_))));
        assert!(matches!(Tensor::create(&[2], f32::NAN), Err(Error::Domain(_))));
    }

    #[test]
    fn channel_sum_cases() {
        let t = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(channel_sum(&t).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);

        let mut data = vec![1.0; 8];
        data.extend(vec![-1.0; 8]);
        let t = Tensor::from_vec(&[2, 2, 2, 2], data).unwrap();
        let s = channel_sum(&t).unwrap();
        assert_eq!(s.dims(), &[2, 2, 2]);
        assert!(s.data().iter().all(|&v| v == 0.0));

        assert!(matches!(channel_sum(&Tensor::zeros(&[2, 2, 2]).unwrap()), Err(Error::Dimension(_))));
        assert!(matches!(channel_sum_2d(&Tensor::zeros(&[2, 2, 2, 2]).unwrap()), Err(Error::Dimension(_))));
    }

    #[test]
    fn channel_sum_matches_voxel_loop() {
        let vals: Vec<f32> = (0..24).map(|i| ((i * 37 % 11) as f32 - 5.0) * 0.37).collect();
        let t = Tensor::from_vec(&[3, 2, 2, 2], vals.clone()).unwrap();
        let s = channel_sum(&t).unwrap();
        for v in 0..8 {
            let expect = (vals[v] as f64 + vals[8 + v] as f64 + vals[16 + v] as f64) as f32;
            assert_eq!(s.data()[v], expect);
        }
    }

    #[test]
    fn relu_cases() {
        let t = Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_map(&t).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::create(&[4], -3.0).unwrap();
        assert!(relu_map(&neg).data().iter().all(|&v| v == 0.0));
        let pos = Tensor::from_vec(&[3], vec![0.0, 1.5, 7.0]).unwrap();
        assert_eq!(relu_map(&pos), pos);
    }

    #[test]
    fn max_cases() {
        assert_eq!(max_all(&Tensor::create(&[3, 3], 2.5).unwrap()), 2.5);
        assert_eq!(max_all(&Tensor::from_vec(&[2], vec![-3.0, -1.0]).unwrap()), -1.0);
        let vals: Vec<f32> = (0..64).map(|i| ((i * 29 % 64) as f32).sin()).collect();
        let mut best = f32::NEG_INFINITY;
        for &v in &vals {
            if v > best {
                best = v;
            }
        }
        assert_eq!(max_all(&Tensor::from_vec(&[4, 4, 4], vals).unwrap()), best);
    }

    #[test]
    fn outer_index_and_stack() {
        let a = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = a.scale(2.0);
        let s = Tensor::stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(s.dims(), &[2, 2, 2]);
        assert_eq!(s.index_outer(1).unwrap(), b);
        assert_eq!(s.get(&[0, 1, 0]), 3.0);
    }
}
