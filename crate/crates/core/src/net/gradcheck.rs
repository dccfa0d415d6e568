//! Central-difference verification of the analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::network::{argmax, Network, SampleTape};
use super::spec::LayerOp;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub param_coords: usize,
    pub tap_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { eps: 1e-5, param_coords: 150, tap_coords: 100, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub param_coords: usize,
    pub tap_coords: usize,
    /// Draws rejected because the stencil crossed a ReLU or pooling switch.
    pub kinks_skipped: usize,
    /// Class whose score was differentiated.
    pub class: usize,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Whether two tapes took the same ReLU and max-pool branches in layers
/// `from..`.
fn same_branches(net: &Network<f64>, a: &SampleTape<f64>, b: &SampleTape<f64>, from: usize) -> bool {
    net.spec.layers.iter().enumerate().skip(from).all(|(i, l)| match l.op {
        LayerOp::Relu => a.nodes[i].iter().zip(&b.nodes[i]).all(|(x, y)| (*x > 0.0) == (*y > 0.0)),
        LayerOp::MaxPool3d { .. } => a.argmax[i] == b.argmax[i],
        _ => true,
    })
}

/// Compares reverse-mode gradients of the top class score of a single clip
/// against central differences, on random parameter and tap coordinates.
/// Coordinates whose stencil switches a ReLU or pooling branch are not
/// differentiable there and are redrawn.
pub fn finite_diff_check(net: &Network<f64>, clip: &Tensor, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut inputs = net.split_clip(clip)?;
    if inputs.len() != 1 {
        return Err(Error::arg("gradient check takes a single clip"));
    }
    let input = inputs.pop().unwrap();
    let tape = net.forward_sample(input.clone());
    let class = argmax(tape.logits());
    let layers = net.spec.layers.len();
    let mut seed = vec![0.0; net.classes()];
    seed[class] = 1.0;
    let mut seeds = vec![None; layers + 1];
    seeds[layers] = Some(seed);
    let mut pgrads = net.params.zeros_like();
    let node_grads = net.backward_sample(&tape, seeds, Some(&mut pgrads), 0);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut worst: f64 = 0.0;

    let mut skipped = 0;

    let n_params = net.params.len();
    let mut probe = net.clone();
    let mut n = 0;
    for i in sample(&mut rng, n_params, n_params).into_iter() {
        if n == cfg.param_coords {
            break;
        }
        let orig = probe.params.get_flat(i);
        probe.params.set_flat(i, orig + cfg.eps);
        let up = probe.forward_sample(input.clone());
        probe.params.set_flat(i, orig - cfg.eps);
        let down = probe.forward_sample(input.clone());
        probe.params.set_flat(i, orig);
        if !same_branches(net, &up, &tape, 0) || !same_branches(net, &down, &tape, 0) {
            skipped += 1;
            continue;
        }
        let fd = (up.logits()[class] - down.logits()[class]) / (2.0 * cfg.eps);
        worst = worst.max(rel_error(pgrads.get_flat(i), fd));
        n += 1;
    }

    let taps = net.spec.tap_nodes()?;
    let sizes: Vec<usize> = taps.iter().map(|&(_, node)| tape.node(node).len()).collect();
    let total: usize = sizes.iter().sum();
    let mut m = 0;
    for flat in sample(&mut rng, total, total).into_iter() {
        if m == cfg.tap_coords {
            break;
        }
        let (mut k, mut off) = (0, flat);
        while off >= sizes[k] {
            off -= sizes[k];
            k += 1;
        }
        let node = taps[k].1;
        let analytic = node_grads[node].as_ref().map_or(0.0, |g| g[off]);
        let eval = |delta: f64| {
            let mut t: SampleTape<f64> = tape.clone();
            t.nodes[node][off] += delta;
            net.run_from(&mut t, node);
            t
        };
        let (up, down) = (eval(cfg.eps), eval(-cfg.eps));
        if !same_branches(net, &up, &tape, node) || !same_branches(net, &down, &tape, node) {
            skipped += 1;
            continue;
        }
        let fd = (up.logits()[class] - down.logits()[class]) / (2.0 * cfg.eps);
        worst = worst.max(rel_error(analytic, fd));
        m += 1;
    }

    Ok(GradCheckReport { max_rel_error: worst, param_coords: n, tap_coords: m, kinks_skipped: skipped, class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::spec::{LayerDef, LayerOp, ModelSpec};

    fn clip(dims: &[usize], seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = dims.iter().product();
        Tensor::from_vec(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_model_is_exact() {
        let spec = ModelSpec {
            input: [2, 3, 4, 4],
            layers: vec![
                LayerDef::named("conv", LayerOp::conv(3, 3, 1, 1)),
                LayerDef::new(LayerOp::avg_pool(2)),
                LayerDef::named("pool", LayerOp::GlobalAvgPool),
                LayerDef::new(LayerOp::Linear { out_features: 3 }),
            ],
            classes: 3,
            taps: vec!["conv".into()],
        };
        let net = Network::<f64>::init(spec, 3).unwrap();
        let r = finite_diff_check(&net, &clip(&[1, 2, 3, 4, 4], 1), &GradCheckConfig::default()).unwrap();
        assert!(r.max_rel_error <= 1e-7, "{r:?}");
    }

    #[test]
    fn two_conv_relu_model() {
        let spec = ModelSpec {
            input: [1, 4, 6, 6],
            layers: vec![
                LayerDef::new(LayerOp::conv(4, 3, 1, 1)),
                LayerDef::named("conv", LayerOp::Relu),
                LayerDef::new(LayerOp::conv(4, 3, 1, 1)),
                LayerDef::new(LayerOp::Relu),
                LayerDef::named("layer1", LayerOp::max_pool(2)),
                LayerDef::new(LayerOp::GlobalAvgPool),
                LayerDef::new(LayerOp::Linear { out_features: 2 }),
            ],
            classes: 2,
            taps: vec!["conv".into(), "layer1".into()],
        };
        let net = Network::<f64>::init(spec, 11).unwrap();
        let cfg = GradCheckConfig { param_coords: 200, tap_coords: 100, ..Default::default() };
        let r = finite_diff_check(&net, &clip(&[1, 1, 4, 6, 6], 2), &cfg).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
        assert!(r.param_coords + r.tap_coords >= 200);
    }

    #[test]
    fn batch_is_rejected() {
        let net = Network::<f64>::init(ModelSpec::reference(2, [1, 8, 8, 8]), 0).unwrap();
        let err = finite_diff_check(&net, &clip(&[2, 1, 8, 8, 8], 0), &GradCheckConfig::default());
        assert!(matches!(err, Err(Error::Argument(_))));
    }
}
