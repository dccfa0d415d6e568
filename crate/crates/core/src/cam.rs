//! Layer-wise gradient/activation attribution maps and their aggregation.
//!
//! For one layer the map is the product of two factors, each obtained by
//! channel-summing a field, resampling it to the clip resolution, dividing by
//! its global maximum and clamping negatives to zero. The gradient factor
//! uses `∂max(y)/∂α`, the activation factor uses `α` itself. Layer maps are
//! summed to form the global-local aggregate.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;

use crate::container::read_container;
use crate::error::{Error, Result};
use crate::interp::{gaussian_refine, upsample_bilinear, upsample_trilinear, UpsampleSpec};
use crate::manifest::AttributionManifest;
use crate::tensor::{channel_sum, channel_sum_2d, max_all, relu_map, Tensor};

/// One tapped layer: activation field and gradient of the selected class
/// score with respect to it, both `C×T'×H'×W'` (or `C×H'×W'` for images).
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub layer_id: String,
    pub alpha: Tensor,
    pub grad: Tensor,
}

impl LayerRecord {
    pub fn new(layer_id: impl Into<String>, alpha: Tensor, grad: Tensor) -> Result<Self> {
        if alpha.dims() != grad.dims() {
            return Err(Error::dim(format!(
                "alpha {:?} and grad {:?} differ",
                alpha.dims(),
                grad.dims()
            )));
        }
        Ok(LayerRecord { layer_id: layer_id.into(), alpha, grad })
    }

    pub fn native_dims(&self) -> &[usize] {
        self.alpha.dims()
    }
}

/// Nonnegative attribution map with the ids of the layers that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyVolume {
    pub values: Tensor,
    pub layers: Vec<String>,
}

impl SaliencyVolume {
    pub fn dims(&self) -> &[usize] {
        self.values.dims()
    }

    pub fn max(&self) -> f32 {
        max_all(&self.values)
    }

    /// Values divided by the global maximum; a zero map stays zero.
    pub fn renormalized(&self) -> Tensor {
        let m = self.max();
        if m > 0.0 {
            self.values.map(|v| ((v as f64) / (m as f64)) as f32)
        } else {
            self.values.clone()
        }
    }
}

/// Signed gradient field `Σ_c ∂max(y)/∂α_c`.
pub fn beta_from_gradients(grad: &Tensor) -> Result<Tensor> {
    channel_sum(grad)
}

/// Activation field reduced over channels by summation.
pub fn alpha_reduce(alpha: &Tensor) -> Result<Tensor> {
    channel_sum(alpha)
}

/// `-grad`, used for counterfactual maps.
pub fn negate_gradients(grad: &Tensor) -> Tensor {
    grad.neg()
}

fn normalize_field(u: Tensor, spec: &UpsampleSpec) -> Result<Tensor> {
    let u = gaussian_refine(&u, spec.gaussian_sigma)?;
    let m = max_all(&u) as f64;
    if m > 0.0 {
        Ok(relu_map(&u.map(|v| (v as f64 / m) as f32)))
    } else {
        Tensor::zeros(u.dims())
    }
}

/// Upsample, divide by the maximum and clamp at zero. A field whose
/// maximum is `<= 0` yields zeros.
pub fn normalize_relu(field: &Tensor, target: [usize; 3]) -> Result<Tensor> {
    normalize_relu_with(field, target, &UpsampleSpec::default())
}

pub fn normalize_relu_with(field: &Tensor, target: [usize; 3], spec: &UpsampleSpec) -> Result<Tensor> {
    normalize_field(upsample_trilinear(field, target)?, spec)
}

pub fn normalize_relu_2d(field: &Tensor, target: [usize; 2], spec: &UpsampleSpec) -> Result<Tensor> {
    normalize_field(upsample_bilinear(field, target)?, spec)
}

pub fn cam_layer(rec: &LayerRecord, target: [usize; 3]) -> Result<SaliencyVolume> {
    cam_layer_with(rec, target, &UpsampleSpec::default())
}

pub fn cam_layer_with(rec: &LayerRecord, target: [usize; 3], spec: &UpsampleSpec) -> Result<SaliencyVolume> {
    let beta = normalize_relu_with(&beta_from_gradients(&rec.grad)?, target, spec)?;
    let alpha = normalize_relu_with(&alpha_reduce(&rec.alpha)?, target, spec)?;
    Ok(SaliencyVolume { values: beta.mul(&alpha)?, layers: vec![rec.layer_id.clone()] })
}

/// Image counterpart of [`cam_layer`] for `C×H'×W'` records.
pub fn cam_2d(rec: &LayerRecord, target: [usize; 2]) -> Result<SaliencyVolume> {
    cam_2d_with(rec, target, &UpsampleSpec::default())
}

pub fn cam_2d_with(rec: &LayerRecord, target: [usize; 2], spec: &UpsampleSpec) -> Result<SaliencyVolume> {
    let beta = normalize_relu_2d(&channel_sum_2d(&rec.grad)?, target, spec)?;
    let alpha = normalize_relu_2d(&channel_sum_2d(&rec.alpha)?, target, spec)?;
    Ok(SaliencyVolume { values: beta.mul(&alpha)?, layers: vec![rec.layer_id.clone()] })
}

/// Sum of layer maps, clamped at zero. Summation runs in list order in `f64`.
pub fn aggregate(cams: &[SaliencyVolume]) -> Result<SaliencyVolume> {
    let first = cams.first().ok_or_else(|| Error::arg("aggregate of an empty list"))?;
    if let Some(bad) = cams.iter().find(|c| c.dims() != first.dims()) {
        return Err(Error::dim(format!("aggregate of {:?} and {:?}", first.dims(), bad.dims())));
    }
    let mut acc = vec![0f64; first.values.len()];
    for cam in cams {
        for (a, &v) in acc.iter_mut().zip(cam.values.data()) {
            *a += v as f64;
        }
    }
    let values = relu_map(&Tensor::from_f64(first.dims(), &acc)?);
    let layers = cams.iter().flat_map(|c| c.layers.iter().cloned()).collect();
    Ok(SaliencyVolume { values, layers })
}

/// Aggregate map over `selected` layers of in-memory records. Layer maps are
/// computed in parallel and summed in selection order.
pub fn attribute_records(
    records: &[LayerRecord],
    selected: &[&str],
    target: [usize; 3],
    spec: &UpsampleSpec,
) -> Result<SaliencyVolume> {
    if selected.is_empty() {
        return Err(Error::arg("no layers selected"));
    }
    let by_id: BTreeMap<&str, &LayerRecord> = records.iter().map(|r| (r.layer_id.as_str(), r)).collect();
    let chosen = selected
        .iter()
        .map(|id| by_id.get(id).copied().ok_or_else(|| Error::Lookup(format!("unknown layer {id:?}"))))
        .collect::<Result<Vec<_>>>()?;
    let cams = chosen
        .par_iter()
        .map(|rec| cam_layer_with(rec, target, spec))
        .collect::<Result<Vec<_>>>()?;
    aggregate(&cams)
}

/// Loads the selected layers named by a manifest and aggregates their maps
/// at the manifest's target resolution. Relative container paths resolve
/// against `base_dir`.
pub fn attribute_clip(
    manifest: &AttributionManifest,
    base_dir: &Path,
    selected: &[&str],
    spec: &UpsampleSpec,
) -> Result<SaliencyVolume> {
    if selected.is_empty() {
        return Err(Error::arg("no layers selected"));
    }
    let mut records = Vec::with_capacity(selected.len());
    for id in selected {
        let entry = manifest
            .layers
            .iter()
            .find(|l| l.id == *id)
            .ok_or_else(|| Error::Lookup(format!("layer {id:?} not in manifest {}", manifest.clip_id)))?;
        let alpha = read_container(base_dir.join(&entry.alpha))?;
        let grad = read_container(base_dir.join(&entry.grad))?;
        records.push(LayerRecord::new(entry.id.clone(), alpha, grad)?);
    }
    match manifest.target_dims[..] {
        [t, h, w] => attribute_records(&records, selected, [t, h, w], spec),
        [h, w] => {
            let cams = records
                .par_iter()
                .map(|rec| cam_2d_with(rec, [h, w], spec))
                .collect::<Result<Vec<_>>>()?;
            aggregate(&cams)
        }
        _ => Err(Error::dim(format!("bad target dims {:?}", manifest.target_dims))),
    }
}
