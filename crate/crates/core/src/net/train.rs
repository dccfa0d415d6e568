//! Plain minibatch SGD on softmax cross-entropy with a step-decay schedule.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gate::GateHeads;
use super::network::{argmax, cross_entropy, Network};
use super::params::{LayerParams, Params};
use super::real::Real;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub lr: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams { lr: 0.001, decay: 0.1, decay_every: 50, epochs: 30, batch_size: 1, seed: 0 }
    }
}

impl Hyperparams {
    /// Step size in effect during `epoch` (zero-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = if self.decay_every == 0 { 0 } else { epoch / self.decay_every };
        self.lr * self.decay.powi(decays as i32)
    }
}

/// Labelled clips held as per-sample buffers.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub inputs: Vec<Vec<T>>,
    pub labels: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn from_tensor(net: &Network<T>, clips: &Tensor, labels: &[usize]) -> Result<Self> {
        let inputs = net.split_clip(clips)?;
        if inputs.len() != labels.len() {
            return Err(Error::arg(format!("{} clips but {} labels", inputs.len(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= net.classes()) {
            return Err(Error::arg(format!("label {bad} out of range for {} classes", net.classes())));
        }
        Ok(Batch { inputs, labels: labels.to_vec() })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Backbone plus optional gate heads, trained jointly.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub net: Network<T>,
    pub gates: Option<GateHeads<T>>,
}

struct Grads<T> {
    net: Params<T>,
    heads: Vec<LayerParams<T>>,
    loss: f64,
}

impl<T: Real> Model<T> {
    pub fn plain(net: Network<T>) -> Self {
        Model { net, gates: None }
    }

    pub fn logits(&self, input: Vec<T>) -> Vec<T> {
        let tape = self.net.forward_sample(input);
        match &self.gates {
            Some(g) => g.fuse(&tape),
            None => tape.logits().to_vec(),
        }
    }

    pub fn predict(&self, inputs: &[Vec<T>]) -> Vec<usize> {
        inputs.par_iter().map(|x| argmax(&self.logits(x.clone()))).collect()
    }

    /// Fraction of `data` classified correctly.
    pub fn accuracy(&self, data: &Batch<T>) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let hits = self.predict(&data.inputs).iter().zip(&data.labels).filter(|(p, l)| p == l).count();
        hits as f64 / data.len() as f64
    }

    fn sample_grads(&self, input: &[T], label: usize) -> Grads<T> {
        let tape = self.net.forward_sample(input.to_vec());
        let mut net = self.net.params.zeros_like();
        let mut heads: Vec<LayerParams<T>> =
            self.gates.iter().flat_map(|g| g.heads.iter().map(LayerParams::zeros_like)).collect();
        let (loss, seeds) = match &self.gates {
            Some(g) => {
                let (loss, dz) = cross_entropy(&g.fuse(&tape), label);
                (loss, g.backward(&self.net, &tape, &dz, Some(&mut heads)))
            }
            None => {
                let (loss, dz) = cross_entropy(tape.logits(), label);
                let mut seeds = vec![None; self.net.spec.layers.len() + 1];
                seeds[self.net.spec.layers.len()] = Some(dz);
                (loss, seeds)
            }
        };
        self.net.backward_sample(&tape, seeds, Some(&mut net), usize::MAX);
        Grads { net, heads, loss: loss.f64() }
    }

    /// One SGD step on the mean loss of `idx`; returns the summed loss.
    fn step(&mut self, data: &Batch<T>, idx: &[usize], lr: f64) -> f64 {
        let parts: Vec<Grads<T>> = idx.par_iter().map(|&i| self.sample_grads(&data.inputs[i], data.labels[i])).collect();
        let mut it = parts.into_iter();
        let mut total = it.next().expect("non-empty batch");
        for g in it {
            total.net.add_assign(&g.net);
            total.heads.iter_mut().zip(&g.heads).for_each(|(a, b)| a.add_assign(b));
            total.loss += g.loss;
        }
        if lr != 0.0 {
            let step = T::of(lr / idx.len() as f64);
            self.net.params.descend(&total.net, step);
            if let Some(g) = &mut self.gates {
                g.heads.iter_mut().zip(&total.heads).for_each(|(p, d)| p.descend(d, step));
            }
        }
        total.loss
    }
}

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean loss over the epoch's updates.
    pub train_loss: f64,
}

pub struct Trainer<T> {
    pub model: Model<T>,
    pub hp: Hyperparams,
    rng: ChaCha8Rng,
    epoch: usize,
    pub log: Vec<EpochLog>,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, hp: Hyperparams) -> Result<Self> {
        if hp.batch_size == 0 {
            return Err(Error::arg("batch size must be positive"));
        }
        if !(hp.lr >= 0.0 && hp.lr.is_finite()) {
            return Err(Error::arg(format!("learning rate {}", hp.lr)));
        }
        let rng = ChaCha8Rng::seed_from_u64(hp.seed);
        Ok(Trainer { model, hp, rng, epoch: 0, log: Vec::new() })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Runs one pass over `data` in a freshly shuffled order.
    pub fn run_epoch(&mut self, data: &Batch<T>) -> Result<&EpochLog> {
        if data.is_empty() {
            return Err(Error::arg("empty training set"));
        }
        let lr = self.hp.lr_at(self.epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut loss = 0.0;
        for chunk in order.chunks(self.hp.batch_size) {
            loss += self.model.step(data, chunk, lr);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { epoch: self.epoch, loss });
            }
        }
        let train_loss = loss / data.len() as f64;
        if !self.model.net.params.is_finite() {
            return Err(Error::TrainingDiverged { epoch: self.epoch, loss: train_loss });
        }
        self.log.push(EpochLog { epoch: self.epoch, lr, train_loss });
        self.epoch += 1;
        Ok(self.log.last().unwrap())
    }

    /// Mean loss of `data` under the current parameters, without updating.
    pub fn evaluate_loss(&self, data: &Batch<T>) -> f64 {
        let total: f64 = data
            .inputs
            .par_iter()
            .zip(&data.labels)
            .map(|(x, &l)| cross_entropy(&self.model.logits(x.clone()), l).0.f64())
            .sum();
        total / data.len().max(1) as f64
    }
}

/// Trains for `hp.epochs` epochs and returns the model with its loss curve.
pub fn train<T: Real>(model: Model<T>, data: &Batch<T>, hp: Hyperparams) -> Result<(Model<T>, Vec<EpochLog>)> {
    let mut trainer = Trainer::new(model, hp)?;
    for _ in 0..trainer.hp.epochs {
        trainer.run_epoch(data)?;
    }
    Ok((trainer.model, trainer.log))
}
