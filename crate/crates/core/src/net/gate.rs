//! Gated attention heads: auxiliary classifiers on intermediate taps whose
//! logits are fused with the backbone's.
//!
//! Each head takes a tapped `C×T×H×W` activation, applies ReLU, averages the
//! channel and spatial axes away, average-pools time by a factor `t` (ceiling
//! windows; a short last window averages only the frames it covers) and maps
//! the resulting `⌈T/t⌉` vector to class logits with a fully-connected layer.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::network::{ForwardTape, Network, SampleTape};
use super::ops::Vol;
use super::params::LayerParams;
use super::real::Real;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadRef {
    Backbone,
    /// Index into `GateConfig::layers`.
    Gate(usize),
}

/// Which heads are averaged into the final logits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Backbone and every gate.
    #[default]
    MeanAll,
    Mean(Vec<HeadRef>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateConfig {
    /// Tapped layers that receive a head; repeats are allowed.
    pub layers: Vec<String>,
    /// Temporal pooling factor.
    pub temporal_factor: usize,
    #[serde(default)]
    pub fusion: Fusion,
}

impl GateConfig {
    pub fn new(layers: &[&str], temporal_factor: usize) -> Self {
        GateConfig { layers: layers.iter().map(|s| s.to_string()).collect(), temporal_factor, fusion: Fusion::MeanAll }
    }

    pub fn fused_heads(&self) -> Vec<HeadRef> {
        match &self.fusion {
            Fusion::MeanAll => std::iter::once(HeadRef::Backbone).chain((0..self.layers.len()).map(HeadRef::Gate)).collect(),
            Fusion::Mean(heads) => heads.clone(),
        }
    }
}

/// Length of the pooled temporal vector.
pub fn pooled_len(t: usize, factor: usize) -> usize {
    t.div_ceil(factor)
}

/// `B×C×T×H×W → B×⌈T/t⌉` pooling used ahead of each head.
pub fn gate_pool(activation: &Tensor, factor: usize) -> Result<Tensor> {
    let d = activation.dims();
    if d.len() != 5 {
        return Err(Error::dim(format!("gate pooling expects B×C×T×H×W, got {d:?}")));
    }
    if factor == 0 {
        return Err(Error::arg("temporal factor must be positive"));
    }
    let vol = Vol::of(&d[1..]);
    let n = vol.len();
    let x: Vec<f64> = activation.to_f64();
    let pooled: Vec<f64> = x.chunks_exact(n).flat_map(|s| gate_features(s, vol, factor)).collect();
    Tensor::from_f64(&[d[0], pooled_len(vol.t, factor)], &pooled)
}

pub(crate) fn gate_features<T: Real>(a: &[T], vol: Vol, factor: usize) -> Vec<T> {
    let plane = vol.h * vol.w;
    let mut frame = vec![T::zero(); vol.t];
    for c in 0..vol.c {
        for (t, f) in frame.iter_mut().enumerate() {
            let s = &a[(c * vol.t + t) * plane..(c * vol.t + t + 1) * plane];
            *f += s.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).sum::<T>();
        }
    }
    let per_frame = T::of((vol.c * plane) as f64);
    (0..pooled_len(vol.t, factor))
        .map(|j| {
            let lo = j * factor;
            let hi = (lo + factor).min(vol.t);
            frame[lo..hi].iter().copied().sum::<T>() / (per_frame * T::of((hi - lo) as f64))
        })
        .collect()
}

/// Adjoint of [`gate_features`].
pub(crate) fn gate_features_backward<T: Real>(a: &[T], vol: Vol, factor: usize, dfeat: &[T]) -> Vec<T> {
    let plane = vol.h * vol.w;
    let per_frame = T::of((vol.c * plane) as f64);
    let mut dframe = vec![T::zero(); vol.t];
    for (j, &g) in dfeat.iter().enumerate() {
        let lo = j * factor;
        let hi = (lo + factor).min(vol.t);
        let share = g / (per_frame * T::of((hi - lo) as f64));
        dframe[lo..hi].iter_mut().for_each(|d| *d = share);
    }
    let mut da = vec![T::zero(); a.len()];
    for c in 0..vol.c {
        for t in 0..vol.t {
            let at = (c * vol.t + t) * plane;
            for k in at..at + plane {
                if a[k] > T::zero() {
                    da[k] = dframe[t];
                }
            }
        }
    }
    da
}

/// Gate configuration together with one fully-connected head per gated layer.
#[derive(Debug, Clone, PartialEq)]
pub struct GateHeads<T> {
    pub config: GateConfig,
    pub heads: Vec<LayerParams<T>>,
    pub(crate) nodes: Vec<usize>,
    pub(crate) vols: Vec<Vol>,
}

impl<T: Real> GateHeads<T> {
    fn resolve(net: &Network<T>, config: &GateConfig) -> Result<(Vec<usize>, Vec<Vol>)> {
        if config.temporal_factor == 0 {
            return Err(Error::arg("temporal factor must be positive"));
        }
        let taps = net.spec.tap_nodes()?;
        let mut nodes = Vec::new();
        let mut vols = Vec::new();
        for name in &config.layers {
            let node = taps
                .iter()
                .find(|(n, _)| n == name)
                .map(|&(_, i)| i)
                .ok_or_else(|| Error::Lookup(format!("gate layer {name:?} is not a tap")))?;
            nodes.push(node);
            vols.push(Vol::of(net.node_shape(node)));
        }
        for head in config.fused_heads() {
            if let HeadRef::Gate(i) = head {
                if i >= config.layers.len() {
                    return Err(Error::Lookup(format!("fusion names gate {i}, only {} exist", config.layers.len())));
                }
            }
        }
        if config.fused_heads().is_empty() {
            return Err(Error::arg("fusion set is empty"));
        }
        Ok((nodes, vols))
    }

    pub fn zeros(net: &Network<T>, config: GateConfig) -> Result<Self> {
        let (nodes, vols) = Self::resolve(net, &config)?;
        let classes = net.classes();
        let heads = vols
            .iter()
            .map(|v| LayerParams::zeros(classes * pooled_len(v.t, config.temporal_factor), classes))
            .collect();
        Ok(GateHeads { config, heads, nodes, vols })
    }

    pub fn init(net: &Network<T>, config: GateConfig, seed: u64) -> Result<Self> {
        let mut g = Self::zeros(net, config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9a7e_5eed);
        for head in &mut g.heads {
            let fan_in = head.weight.len() / head.bias.len();
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
            head.weight.iter_mut().for_each(|w| *w = T::of(normal.sample(&mut rng)));
        }
        Ok(g)
    }

    pub fn with_heads(net: &Network<T>, config: GateConfig, heads: Vec<LayerParams<T>>) -> Result<Self> {
        let z = Self::zeros(net, config)?;
        let ok = heads.len() == z.heads.len()
            && heads.iter().zip(&z.heads).all(|(a, b)| a.weight.len() == b.weight.len() && a.bias.len() == b.bias.len());
        if !ok {
            return Err(Error::dim("gate head buffers do not match the configuration"));
        }
        Ok(GateHeads { heads, ..z })
    }

    pub fn cast<U: Real>(&self) -> GateHeads<U> {
        GateHeads {
            config: self.config.clone(),
            heads: self.heads.iter().map(LayerParams::cast).collect(),
            nodes: self.nodes.clone(),
            vols: self.vols.clone(),
        }
    }

    fn head_input(&self, tape: &SampleTape<T>, g: usize) -> Vec<T> {
        gate_features(tape.node(self.nodes[g]), self.vols[g], self.config.temporal_factor)
    }

    fn head_logits(&self, tape: &SampleTape<T>, g: usize) -> Vec<T> {
        let p = &self.heads[g];
        super::ops::linear_forward(&self.head_input(tape, g), &p.weight, &p.bias)
    }

    /// Fused logits for one sample given its backbone tape.
    pub fn fuse(&self, tape: &SampleTape<T>) -> Vec<T> {
        let heads = self.config.fused_heads();
        let mut acc = vec![T::zero(); tape.logits().len()];
        for h in &heads {
            let logits = match h {
                HeadRef::Backbone => tape.logits().to_vec(),
                HeadRef::Gate(g) => self.head_logits(tape, *g),
            };
            acc.iter_mut().zip(logits).for_each(|(a, l)| *a += l);
        }
        let n = T::of(heads.len() as f64);
        acc.into_iter().map(|v| v / n).collect()
    }

    /// Gradient seeds for the backbone tape given `dfused`, accumulating head
    /// parameter gradients into `dheads`.
    pub(crate) fn backward(
        &self,
        net: &Network<T>,
        tape: &SampleTape<T>,
        dfused: &[T],
        mut dheads: Option<&mut [LayerParams<T>]>,
    ) -> Vec<Option<Vec<T>>> {
        let heads = self.config.fused_heads();
        let n = T::of(heads.len() as f64);
        let d: Vec<T> = dfused.iter().map(|&g| g / n).collect();
        let mut seeds: Vec<Option<Vec<T>>> = vec![None; net.spec.layers.len() + 1];
        for h in &heads {
            match h {
                HeadRef::Backbone => {
                    let last = seeds.len() - 1;
                    match &mut seeds[last] {
                        Some(s) => s.iter_mut().zip(&d).for_each(|(a, &b)| *a += b),
                        slot => *slot = Some(d.clone()),
                    }
                }
                HeadRef::Gate(g) => {
                    let input = self.head_input(tape, *g);
                    let p = &self.heads[*g];
                    let dp = dheads.as_deref_mut().map(|dh| {
                        let l = &mut dh[*g];
                        (&mut l.weight[..], &mut l.bias[..])
                    });
                    let dfeat = super::ops::linear_backward(&input, &p.weight, &d, dp);
                    let node = self.nodes[*g];
                    let da = gate_features_backward(tape.node(node), self.vols[*g], self.config.temporal_factor, &dfeat);
                    match &mut seeds[node] {
                        Some(s) => s.iter_mut().zip(da).for_each(|(a, b)| *a += b),
                        slot => *slot = Some(da),
                    }
                }
            }
        }
        seeds
    }
}

/// Forward pass of the backbone followed by head fusion.
pub fn gated_forward<T: Real>(net: &Network<T>, heads: &GateHeads<T>, clip: &Tensor) -> Result<(Vec<Vec<T>>, ForwardTape<T>)> {
    let (_, tape) = net.forward(clip)?;
    let fused = tape.samples.iter().map(|s| heads.fuse(s)).collect();
    Ok((fused, tape))
}
