//! Per-layer activation and gradient records straight from the network.

use super::network::{argmax, ClassSelect, Network};
use super::real::Real;
use super::train::Model;
use crate::cam::LayerRecord;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Records for one clip, with the class that was differentiated.
#[derive(Debug, Clone)]
pub struct ClipRecords {
    pub records: Vec<LayerRecord>,
    pub class: usize,
    pub score: f64,
    pub logits: Vec<f64>,
}

/// Runs a single `1×C×T×H×W` clip forward and backward, returning each tap's
/// `C×T×H×W` activation and the gradient of the selected class score.
pub fn clip_records<T: Real>(net: &Network<T>, clip: &Tensor, class: ClassSelect) -> Result<ClipRecords> {
    if clip.dims().first() != Some(&1) {
        return Err(Error::arg(format!("expected a single clip, got dims {:?}", clip.dims())));
    }
    let (logits, tape) = net.forward(clip)?;
    let logits: Vec<f64> = logits[0].iter().map(|v| v.f64()).collect();
    let c = match class {
        ClassSelect::Argmax => argmax(&logits),
        ClassSelect::Index(c) => c,
    };
    let grads = net.grads_wrt_activations(&tape, ClassSelect::Index(c))?;
    let records = tape
        .tap_names()
        .map(|name| {
            let alpha = tape.activation(name)?.index_outer(0)?;
            let grad = grads[name].index_outer(0)?;
            LayerRecord::new(name, alpha, grad)
        })
        .collect::<Result<_>>()?;
    Ok(ClipRecords { records, class: c, score: logits[c], logits })
}

/// Like [`clip_records`], but for a gated model the differentiated score is
/// the selected fused logit, so gradients flow through every fused head.
pub fn model_records<T: Real>(model: &Model<T>, clip: &Tensor, class: ClassSelect) -> Result<ClipRecords> {
    let Some(gates) = &model.gates else {
        return clip_records(&model.net, clip, class);
    };
    let net = &model.net;
    if clip.dims().first() != Some(&1) {
        return Err(Error::arg(format!("expected a single clip, got dims {:?}", clip.dims())));
    }
    let (_, tape) = net.forward(clip)?;
    let sample = &tape.samples[0];
    let logits: Vec<f64> = gates.fuse(sample).iter().map(|v| v.f64()).collect();
    let c = match class {
        ClassSelect::Argmax => argmax(&logits),
        ClassSelect::Index(c) if c < logits.len() => c,
        ClassSelect::Index(c) => return Err(Error::arg(format!("class {c} out of range for {} classes", logits.len()))),
    };
    let mut d = vec![T::zero(); logits.len()];
    d[c] = T::one();
    let seeds = gates.backward(net, sample, &d, None);
    let lowest = tape.taps.iter().map(|&(_, n)| n).min().unwrap_or(0);
    let grads = net.backward_sample(sample, seeds, None, lowest);
    let records = tape
        .taps
        .iter()
        .map(|(name, node)| {
            let alpha = tape.activation(name)?.index_outer(0)?;
            let g: Vec<f64> = match &grads[*node] {
                Some(g) => g.iter().map(|v| v.f64()).collect(),
                None => vec![0.0; alpha.len()],
            };
            LayerRecord::new(name.as_str(), alpha.clone(), Tensor::from_f64(alpha.dims(), &g)?)
        })
        .collect::<Result<_>>()?;
    Ok(ClipRecords { records, class: c, score: logits[c], logits })
}
