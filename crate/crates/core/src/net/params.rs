use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::real::Real;
use super::spec::{LayerOp, ModelSpec};
use crate::error::Result;

/// Weight and bias buffers of one layer; both empty for parameter-free layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerParams<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LayerParams<T> {
    pub fn zeros(weights: usize, biases: usize) -> Self {
        LayerParams { weight: vec![T::zero(); weights], bias: vec![T::zero(); biases] }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.weight.len(), self.bias.len())
    }

    pub fn cast<U: Real>(&self) -> LayerParams<U> {
        LayerParams {
            weight: self.weight.iter().map(|&v| U::of(v.f64())).collect(),
            bias: self.bias.iter().map(|&v| U::of(v.f64())).collect(),
        }
    }

    /// `self -= step * grad`.
    pub fn descend(&mut self, grad: &LayerParams<T>, step: T) {
        for (p, &g) in self.weight.iter_mut().zip(&grad.weight) {
            *p = *p - step * g;
        }
        for (p, &g) in self.bias.iter_mut().zip(&grad.bias) {
            *p = *p - step * g;
        }
    }

    pub fn scale(&mut self, factor: T) {
        self.weight.iter_mut().chain(self.bias.iter_mut()).for_each(|v| *v = *v * factor);
    }

    pub fn add_assign(&mut self, other: &LayerParams<T>) {
        for (a, &b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, &b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
    }

    pub(crate) fn get(&self, i: usize) -> T {
        if i < self.weight.len() {
            self.weight[i]
        } else {
            self.bias[i - self.weight.len()]
        }
    }

    pub(crate) fn get_mut(&mut self, i: usize) -> &mut T {
        let n = self.weight.len();
        if i < n {
            &mut self.weight[i]
        } else {
            &mut self.bias[i - n]
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Per-layer parameters, indexed like `ModelSpec::layers`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Params<T> {
    pub layers: Vec<LayerParams<T>>,
}

impl<T: Real> Params<T> {
    /// Zero-initialized buffers shaped for `spec`.
    pub fn zeros(spec: &ModelSpec) -> Result<Self> {
        let shapes = spec.node_shapes()?;
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .map(|(i, l)| match &l.op {
                LayerOp::Conv3d { out_channels, kernel, .. } => LayerParams::zeros(
                    out_channels * shapes[i][0] * kernel.iter().product::<usize>(),
                    *out_channels,
                ),
                LayerOp::ProjectedAdd { from, .. } => {
                    LayerParams::zeros(shapes[i][0] * shapes[spec.residual_node(from)][0], shapes[i][0])
                }
                LayerOp::Linear { out_features } => {
                    LayerParams::zeros(out_features * shapes[i].iter().product::<usize>(), *out_features)
                }
                _ => LayerParams::default(),
            })
            .collect();
        Ok(Params { layers })
    }

    /// He-normal weights from a seeded stream, zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        let shapes = spec.node_shapes()?;
        let mut params = Self::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, (layer, p)) in spec.layers.iter().zip(params.layers.iter_mut()).enumerate() {
            let fan_in = match &layer.op {
                LayerOp::Conv3d { kernel, .. } => shapes[i][0] * kernel.iter().product::<usize>(),
                LayerOp::ProjectedAdd { from, .. } => shapes[spec.residual_node(from)][0],
                LayerOp::Linear { .. } => shapes[i].iter().product(),
                _ => continue,
            };
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            for w in p.weight.iter_mut() {
                *w = T::of(normal.sample(&mut rng));
            }
        }
        Ok(params)
    }

    pub fn zeros_like(&self) -> Self {
        Params { layers: self.layers.iter().map(LayerParams::zeros_like).collect() }
    }

    pub fn cast<U: Real>(&self) -> Params<U> {
        Params { layers: self.layers.iter().map(LayerParams::cast).collect() }
    }

    pub fn len(&self) -> usize {
        self.layers.iter().map(LayerParams::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn descend(&mut self, grad: &Params<T>, step: T) {
        for (p, g) in self.layers.iter_mut().zip(&grad.layers) {
            p.descend(g, step);
        }
    }

    pub fn scale(&mut self, factor: T) {
        self.layers.iter_mut().for_each(|l| l.scale(factor));
    }

    pub fn add_assign(&mut self, other: &Params<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }

    /// `(layer, offset)` of the `i`-th scalar in flat order.
    pub(crate) fn locate(&self, mut i: usize) -> (usize, usize) {
        for (l, p) in self.layers.iter().enumerate() {
            if i < p.len() {
                return (l, i);
            }
            i -= p.len();
        }
        panic!("parameter index out of range");
    }

    pub fn get_flat(&self, i: usize) -> T {
        let (l, o) = self.locate(i);
        self.layers[l].get(o)
    }

    pub fn set_flat(&mut self, i: usize, v: T) {
        let (l, o) = self.locate(i);
        *self.layers[l].get_mut(o) = v;
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(LayerParams::is_finite)
    }
}
