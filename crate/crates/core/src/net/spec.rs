//! Network topology: an ordered list of layers with optional names, shape
//! inference, and the reference toy model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved node name for the network input.
pub const INPUT_NODE: &str = "input";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerOp {
    Conv3d { out_channels: usize, kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3] },
    Relu,
    MaxPool3d { kernel: [usize; 3], stride: [usize; 3] },
    AvgPool3d { kernel: [usize; 3], stride: [usize; 3] },
    /// Adds the output of an earlier named layer (or the input).
    ResidualAdd { from: String },
    /// Adds a strided 1×1×1 convolution of an earlier output, matching its
    /// channels and extent to the current ones.
    ProjectedAdd { from: String, stride: [usize; 3] },
    GlobalAvgPool,
    Linear { out_features: usize },
}

impl LayerOp {
    pub fn conv(out_channels: usize, k: usize, stride: usize, padding: usize) -> Self {
        LayerOp::Conv3d { out_channels, kernel: [k; 3], stride: [stride; 3], padding: [padding; 3] }
    }

    pub fn max_pool(k: usize) -> Self {
        LayerOp::MaxPool3d { kernel: [k; 3], stride: [k; 3] }
    }

    pub fn avg_pool(k: usize) -> Self {
        LayerOp::AvgPool3d { kernel: [k; 3], stride: [k; 3] }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerOp::Conv3d { .. } | LayerOp::ProjectedAdd { .. } | LayerOp::Linear { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDef {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub op: LayerOp,
}

impl LayerDef {
    pub fn new(op: LayerOp) -> Self {
        LayerDef { name: None, op }
    }

    pub fn named(name: &str, op: LayerOp) -> Self {
        LayerDef { name: Some(name.to_string()), op }
    }
}

/// Topology of a clip classifier. Node 0 is the input `C×T×H×W`; node `i+1`
/// is the output of layer `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// `[C, T, H, W]` of a single clip.
    pub input: [usize; 4],
    pub layers: Vec<LayerDef>,
    pub classes: usize,
    /// Names of layers whose activations are recorded for attribution.
    pub taps: Vec<String>,
}

pub(crate) fn pooled_extent(n: usize, k: usize, s: usize, what: &str) -> Result<usize> {
    if k == 0 || s == 0 || n < k {
        return Err(Error::dim(format!("{what}: extent {n} with kernel {k} stride {s}")));
    }
    Ok((n - k) / s + 1)
}

impl ModelSpec {
    /// Reference topology:
    /// `conv(8,k3) → ReLU → pool2` [conv],
    /// `conv(16,k3) → ReLU → pool2 + proj(conv)` [layer1],
    /// `conv(32,k3) → ReLU → pool2` [layer2], global average pool, `fc(classes)`.
    /// `proj` is a stride-2 1×1×1 convolution.
    pub fn reference(classes: usize, input: [usize; 4]) -> Self {
        use LayerOp::*;
        let layers = vec![
            LayerDef::new(LayerOp::conv(8, 3, 1, 1)),
            LayerDef::new(Relu),
            LayerDef::named("conv", LayerOp::max_pool(2)),
            LayerDef::new(LayerOp::conv(16, 3, 1, 1)),
            LayerDef::new(Relu),
            LayerDef::new(LayerOp::max_pool(2)),
            LayerDef::named("layer1", ProjectedAdd { from: "conv".into(), stride: [2; 3] }),
            LayerDef::new(LayerOp::conv(32, 3, 1, 1)),
            LayerDef::new(Relu),
            LayerDef::named("layer2", LayerOp::max_pool(2)),
            LayerDef::new(GlobalAvgPool),
            LayerDef::named("fc", Linear { out_features: classes }),
        ];
        ModelSpec { input, layers, classes, taps: vec!["conv".into(), "layer1".into(), "layer2".into()] }
    }

    /// Node index holding the output of the layer called `name`.
    pub fn node_of(&self, name: &str) -> Option<usize> {
        if name == INPUT_NODE {
            return Some(0);
        }
        self.layers.iter().position(|l| l.name.as_deref() == Some(name)).map(|i| i + 1)
    }

    pub fn tap_nodes(&self) -> Result<Vec<(String, usize)>> {
        self.taps
            .iter()
            .map(|t| {
                self.node_of(t)
                    .map(|n| (t.clone(), n))
                    .ok_or_else(|| Error::Lookup(format!("tap {t:?} names no layer")))
            })
            .collect()
    }

    /// Shapes of every node, validating the chain.
    pub fn node_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input.contains(&0) {
            return Err(Error::dim(format!("input dims {:?}", self.input)));
        }
        let mut shapes: Vec<Vec<usize>> = vec![self.input.to_vec()];
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some(name) = &layer.name {
                if name == INPUT_NODE || self.layers[..i].iter().any(|l| l.name.as_ref() == Some(name)) {
                    return Err(Error::arg(format!("duplicate layer name {name:?}")));
                }
            }
            let cur = shapes.last().unwrap().clone();
            let vol = |what: &str| -> Result<[usize; 4]> {
                <[usize; 4]>::try_from(cur.as_slice())
                    .map_err(|_| Error::dim(format!("layer {i} ({what}) needs a C×T×H×W input, got {cur:?}")))
            };
            let next = match &layer.op {
                LayerOp::Conv3d { out_channels, kernel, stride, padding } => {
                    let [_, t, h, w] = vol("conv3d")?;
                    if *out_channels == 0 {
                        return Err(Error::dim(format!("layer {i}: zero output channels")));
                    }
                    let mut out = vec![*out_channels];
                    for (ax, n) in [t, h, w].into_iter().enumerate() {
                        out.push(pooled_extent(n + 2 * padding[ax], kernel[ax], stride[ax], "conv3d")?);
                    }
                    out
                }
                LayerOp::Relu => cur.clone(),
                LayerOp::MaxPool3d { kernel, stride } | LayerOp::AvgPool3d { kernel, stride } => {
                    let [c, t, h, w] = vol("pool")?;
                    let mut out = vec![c];
                    for (ax, n) in [t, h, w].into_iter().enumerate() {
                        out.push(pooled_extent(n, kernel[ax], stride[ax], "pool")?);
                    }
                    out
                }
                LayerOp::ResidualAdd { from } | LayerOp::ProjectedAdd { from, .. } => {
                    let node = self.layers[..i]
                        .iter()
                        .position(|l| l.name.as_deref() == Some(from.as_str()))
                        .map(|j| j + 1)
                        .or_else(|| (from == INPUT_NODE).then_some(0))
                        .ok_or_else(|| Error::Lookup(format!("residual source {from:?} is not an earlier layer")))?;
                    let source = match &layer.op {
                        LayerOp::ProjectedAdd { stride, .. } => {
                            let src = &shapes[node];
                            if src.len() != 4 || cur.len() != 4 {
                                return Err(Error::dim(format!("projection {from:?} needs C×T×H×W fields")));
                            }
                            let mut out = vec![cur[0]];
                            for ax in 0..3 {
                                out.push(pooled_extent(src[ax + 1], 1, stride[ax], "projection")?);
                            }
                            out
                        }
                        _ => shapes[node].clone(),
                    };
                    if source != cur {
                        return Err(Error::dim(format!(
                            "residual {from:?} gives shape {source:?}, current is {cur:?}"
                        )));
                    }
                    cur.clone()
                }
                LayerOp::GlobalAvgPool => {
                    vol("global_avg_pool")?;
                    vec![cur[0]]
                }
                LayerOp::Linear { out_features } => {
                    if *out_features == 0 {
                        return Err(Error::dim(format!("layer {i}: zero output features")));
                    }
                    vec![*out_features]
                }
            };
            shapes.push(next);
        }
        match self.layers.last().map(|l| &l.op) {
            Some(LayerOp::Linear { out_features }) if *out_features == self.classes => {}
            _ => return Err(Error::dim(format!("final layer must be fc({})", self.classes))),
        }
        for (tap, node) in self.tap_nodes()? {
            if shapes[node].len() != 4 {
                return Err(Error::dim(format!("tap {tap:?} is not a C×T×H×W field")));
            }
        }
        Ok(shapes)
    }

    /// Index of the node feeding layer `i` for residual adds.
    pub(crate) fn residual_node(&self, from: &str) -> usize {
        self.node_of(from).expect("validated residual source")
    }

    pub fn param_count(&self) -> Result<usize> {
        let shapes = self.node_shapes()?;
        Ok(self
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| match &l.op {
                LayerOp::Conv3d { out_channels, kernel, .. } => {
                    out_channels * shapes[i][0] * kernel.iter().product::<usize>() + out_channels
                }
                LayerOp::ProjectedAdd { from, .. } => {
                    shapes[i][0] * shapes[self.residual_node(from)][0] + shapes[i][0]
                }
                LayerOp::Linear { out_features } => {
                    out_features * shapes[i].iter().product::<usize>() + out_features
                }
                _ => 0,
            })
            .sum())
    }
}
