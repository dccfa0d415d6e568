//! Forward pass with a replayable tape and exact reverse-mode gradients.

use std::collections::BTreeMap;

use super::ops::{self, ConvGeom, Vol};
use super::params::Params;
use super::real::Real;
use super::spec::{LayerOp, ModelSpec};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which class score to differentiate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassSelect {
    #[default]
    Argmax,
    Index(usize),
}

/// Activations of every node for one sample, plus pooling winners.
#[derive(Debug, Clone)]
pub struct SampleTape<T> {
    pub(crate) nodes: Vec<Vec<T>>,
    pub(crate) argmax: Vec<Vec<u32>>,
}

impl<T: Real> SampleTape<T> {
    pub fn logits(&self) -> &[T] {
        self.nodes.last().expect("non-empty tape")
    }

    pub fn node(&self, i: usize) -> &[T] {
        &self.nodes[i]
    }
}

/// Tapes for a batch together with the names and shapes of the tapped nodes.
#[derive(Debug, Clone)]
pub struct ForwardTape<T> {
    pub samples: Vec<SampleTape<T>>,
    pub(crate) taps: Vec<(String, usize)>,
    pub(crate) shapes: Vec<Vec<usize>>,
}

impl<T: Real> ForwardTape<T> {
    pub fn batch(&self) -> usize {
        self.samples.len()
    }

    pub fn tap_names(&self) -> impl Iterator<Item = &str> {
        self.taps.iter().map(|(n, _)| n.as_str())
    }

    /// Recorded activation of a tap as a `B×C×T×H×W` tensor.
    pub fn activation(&self, tap: &str) -> Result<Tensor> {
        let node = self.tap_node(tap)?;
        self.node_tensor(node, |s| s.nodes[node].clone())
    }

    pub(crate) fn tap_node(&self, tap: &str) -> Result<usize> {
        self.taps
            .iter()
            .find(|(n, _)| n == tap)
            .map(|&(_, i)| i)
            .ok_or_else(|| Error::Lookup(format!("no tap named {tap:?}")))
    }

    pub(crate) fn node_tensor(&self, node: usize, per_sample: impl Fn(&SampleTape<T>) -> Vec<T>) -> Result<Tensor> {
        let mut dims = vec![self.samples.len()];
        dims.extend_from_slice(&self.shapes[node]);
        let data: Vec<f64> = self.samples.iter().flat_map(|s| per_sample(s)).map(|v| v.f64()).collect();
        Tensor::from_f64(&dims, &data)
    }
}

pub(crate) fn argmax<T: Real>(xs: &[T]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, T::neg_infinity()), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, v: Vec<T>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(v).for_each(|(a, b)| *a += b),
        None => *slot = Some(v),
    }
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    pub spec: ModelSpec,
    pub params: Params<T>,
    pub(crate) shapes: Vec<Vec<usize>>,
}

impl<T: Real> Network<T> {
    pub fn new(spec: ModelSpec, params: Params<T>) -> Result<Self> {
        let shapes = spec.node_shapes()?;
        let expected = Params::<T>::zeros(&spec)?;
        let ok = params.layers.len() == expected.layers.len()
            && params
                .layers
                .iter()
                .zip(&expected.layers)
                .all(|(a, b)| a.weight.len() == b.weight.len() && a.bias.len() == b.bias.len());
        if !ok {
            return Err(Error::dim("parameter buffers do not match the topology"));
        }
        Ok(Network { spec, params, shapes })
    }

    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let params = Params::init(&spec, seed)?;
        Self::new(spec, params)
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network { spec: self.spec.clone(), params: self.params.cast(), shapes: self.shapes.clone() }
    }

    pub fn node_shape(&self, node: usize) -> &[usize] {
        &self.shapes[node]
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    fn conv_geom(&self, i: usize) -> ConvGeom {
        match &self.spec.layers[i].op {
            LayerOp::Conv3d { kernel, stride, padding, .. } => ConvGeom {
                input: Vol::of(&self.shapes[i]),
                output: Vol::of(&self.shapes[i + 1]),
                kernel: *kernel,
                stride: *stride,
                padding: *padding,
            },
            LayerOp::ProjectedAdd { from, stride } => {
                let src = self.spec.residual_node(from);
                ConvGeom {
                    input: Vol::of(&self.shapes[src]),
                    output: Vol::of(&self.shapes[i + 1]),
                    kernel: [1; 3],
                    stride: *stride,
                    padding: [0; 3],
                }
            }
            _ => unreachable!("not a conv layer"),
        }
    }

    /// Splits a `B×C×T×H×W` clip tensor into per-sample buffers.
    pub(crate) fn split_clip(&self, clip: &Tensor) -> Result<Vec<Vec<T>>> {
        let d = clip.dims();
        if d.len() != 5 || d[1..] != self.spec.input {
            return Err(Error::dim(format!(
                "clip dims {d:?} do not match B×{:?}",
                self.spec.input
            )));
        }
        let n: usize = d[1..].iter().product();
        Ok(clip.data().chunks_exact(n).map(|c| c.iter().map(|&v| T::of(v as f64)).collect()).collect())
    }

    pub fn forward_sample(&self, input: Vec<T>) -> SampleTape<T> {
        let layers = self.spec.layers.len();
        let mut tape = SampleTape { nodes: Vec::with_capacity(layers + 1), argmax: vec![Vec::new(); layers] };
        tape.nodes.push(input);
        self.run_from(&mut tape, 0);
        tape
    }

    /// Recomputes layers `start..` from the stored node `start`.
    pub(crate) fn run_from(&self, tape: &mut SampleTape<T>, start: usize) {
        tape.nodes.truncate(start + 1);
        let mut cols = Vec::new();
        for i in start..self.spec.layers.len() {
            let x = &tape.nodes[i];
            let p = &self.params.layers[i];
            let out = match &self.spec.layers[i].op {
                LayerOp::Conv3d { .. } => ops::conv_forward(x, &p.weight, &p.bias, &self.conv_geom(i), &mut cols),
                LayerOp::Relu => ops::relu_forward(x),
                LayerOp::MaxPool3d { kernel, stride } => {
                    let (out, arg) = ops::max_pool_forward(x, Vol::of(&self.shapes[i]), *kernel, *stride);
                    tape.argmax[i] = arg;
                    out
                }
                LayerOp::AvgPool3d { kernel, stride } => {
                    ops::avg_pool_forward(x, Vol::of(&self.shapes[i]), *kernel, *stride)
                }
                LayerOp::ResidualAdd { from } => {
                    let other = &tape.nodes[self.spec.residual_node(from)];
                    x.iter().zip(other).map(|(&a, &b)| a + b).collect()
                }
                LayerOp::ProjectedAdd { from, .. } => {
                    let src = &tape.nodes[self.spec.residual_node(from)];
                    let proj = ops::conv_forward(src, &p.weight, &p.bias, &self.conv_geom(i), &mut cols);
                    x.iter().zip(proj).map(|(&a, b)| a + b).collect()
                }
                LayerOp::GlobalAvgPool => ops::global_avg_forward(x, Vol::of(&self.shapes[i])),
                LayerOp::Linear { .. } => ops::linear_forward(x, &p.weight, &p.bias),
            };
            tape.nodes.push(out);
        }
    }

    /// Logits for every clip in the batch and the tape that produced them.
    pub fn forward(&self, clip: &Tensor) -> Result<(Vec<Vec<T>>, ForwardTape<T>)> {
        let samples: Vec<SampleTape<T>> = self.split_clip(clip)?.into_iter().map(|x| self.forward_sample(x)).collect();
        let logits = samples.iter().map(|s| s.logits().to_vec()).collect();
        Ok((logits, ForwardTape { samples, taps: self.spec.tap_nodes()?, shapes: self.shapes.clone() }))
    }

    /// Reverse pass for one sample. `seeds[n]` holds an upstream gradient for
    /// node `n` (normally only the logits). Returns the gradient of every node
    /// down to `lowest_node`; parameter gradients accumulate into `pgrads`.
    pub fn backward_sample(
        &self,
        tape: &SampleTape<T>,
        mut seeds: Vec<Option<Vec<T>>>,
        mut pgrads: Option<&mut Params<T>>,
        lowest_node: usize,
    ) -> Vec<Option<Vec<T>>> {
        seeds.resize(self.spec.layers.len() + 1, None);
        let grads = &mut seeds;
        let pgrads_wanted = pgrads.is_some();
        let stop = if pgrads_wanted { 0 } else { lowest_node };
        let mut cols = Vec::new();
        for i in (stop..self.spec.layers.len()).rev() {
            let Some(g) = grads[i + 1].take() else { continue };
            let want_input = i >= lowest_node || (pgrads_wanted && i > 0);
            let x = &tape.nodes[i];
            let dx = match &self.spec.layers[i].op {
                LayerOp::Conv3d { .. } => {
                    let p = &self.params.layers[i];
                    let dparams = pgrads.as_deref_mut().map(|pg| {
                        let l = &mut pg.layers[i];
                        (&mut l.weight[..], &mut l.bias[..])
                    });
                    ops::conv_backward(x, &p.weight, &g, &self.conv_geom(i), dparams, want_input, &mut cols)
                }
                LayerOp::Relu => Some(ops::relu_backward(&tape.nodes[i + 1], &g)),
                LayerOp::MaxPool3d { .. } => Some(ops::max_pool_backward(&g, &tape.argmax[i], x.len())),
                LayerOp::AvgPool3d { kernel, stride } => {
                    Some(ops::avg_pool_backward(&g, Vol::of(&self.shapes[i]), *kernel, *stride))
                }
                LayerOp::ResidualAdd { from } => {
                    accumulate(&mut grads[self.spec.residual_node(from)], g.clone());
                    Some(g.clone())
                }
                LayerOp::ProjectedAdd { from, .. } => {
                    let src = self.spec.residual_node(from);
                    let p = &self.params.layers[i];
                    let dparams = pgrads.as_deref_mut().map(|pg| {
                        let l = &mut pg.layers[i];
                        (&mut l.weight[..], &mut l.bias[..])
                    });
                    let want_src = src >= lowest_node || (pgrads_wanted && src > 0);
                    let ds = ops::conv_backward(&tape.nodes[src], &p.weight, &g, &self.conv_geom(i), dparams, want_src, &mut cols);
                    if let Some(ds) = ds {
                        accumulate(&mut grads[src], ds);
                    }
                    Some(g.clone())
                }
                LayerOp::GlobalAvgPool => Some(ops::global_avg_backward(&g, Vol::of(&self.shapes[i]))),
                LayerOp::Linear { .. } => {
                    let p = &self.params.layers[i];
                    let dparams = pgrads.as_deref_mut().map(|pg| {
                        let l = &mut pg.layers[i];
                        (&mut l.weight[..], &mut l.bias[..])
                    });
                    Some(ops::linear_backward(x, &p.weight, &g, dparams))
                }
            };
            grads[i + 1] = Some(g);
            if let (Some(dx), true) = (dx, want_input) {
                accumulate(&mut grads[i], dx);
            }
        }
        std::mem::take(grads)
    }

    /// Gradient of the selected class score with respect to every tap, as
    /// `B×C×T×H×W` tensors keyed by tap name.
    pub fn grads_wrt_activations(&self, tape: &ForwardTape<T>, class: ClassSelect) -> Result<BTreeMap<String, Tensor>> {
        let classes = self.classes();
        if let ClassSelect::Index(c) = class {
            if c >= classes {
                return Err(Error::arg(format!("class {c} out of range for {classes} classes")));
            }
        }
        let lowest = tape.taps.iter().map(|&(_, n)| n).min().unwrap_or(self.spec.layers.len());
        let per_sample: Vec<Vec<Option<Vec<T>>>> = tape
            .samples
            .iter()
            .map(|s| {
                let c = match class {
                    ClassSelect::Argmax => argmax(s.logits()),
                    ClassSelect::Index(c) => c,
                };
                let mut seed = vec![T::zero(); classes];
                seed[c] = T::one();
                let mut seeds = vec![None; self.spec.layers.len() + 1];
                seeds[self.spec.layers.len()] = Some(seed);
                self.backward_sample(s, seeds, None, lowest)
            })
            .collect();
        let mut out = BTreeMap::new();
        for (name, node) in &tape.taps {
            let zeros = vec![T::zero(); self.shapes[*node].iter().product()];
            let mut dims = vec![tape.samples.len()];
            dims.extend_from_slice(&self.shapes[*node]);
            let data: Vec<f64> = per_sample
                .iter()
                .flat_map(|g| g[*node].clone().unwrap_or_else(|| zeros.clone()))
                .map(|v| v.f64())
                .collect();
            out.insert(name.clone(), Tensor::from_f64(&dims, &data)?);
        }
        Ok(out)
    }

    /// Predicted class per clip.
    pub fn predict(&self, clip: &Tensor) -> Result<Vec<usize>> {
        let (logits, _) = self.forward(clip)?;
        Ok(logits.iter().map(|l| argmax(l)).collect())
    }
}

/// Softmax cross-entropy of `logits` against `label` and its gradient.
pub fn cross_entropy<T: Real>(logits: &[T], label: usize) -> (T, Vec<T>) {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let loss = total.ln() + m - logits[label];
    let mut grad: Vec<T> = exps.iter().map(|&e| e / total).collect();
    grad[label] = grad[label] - T::one();
    (loss, grad)
}
