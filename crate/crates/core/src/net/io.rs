//! On-disk layout of trained models and synthetic datasets.
//!
//! A model directory holds `topology.json` plus one container per parameter
//! buffer (`layer_<i>_weight.atc`, `layer_<i>_bias.atc`, and
//! `gate_<g>_weight.atc` / `gate_<g>_bias.atc` for gated models). A dataset
//! directory holds `clips.atc`, `labels.json` and `boxes.jsonl`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::gate::{GateConfig, GateHeads};
use super::network::Network;
use super::params::{LayerParams, Params};
use super::spec::ModelSpec;
use super::synth::SyntheticVideoSet;
use super::train::Model;
use crate::container::{read_container, write_container};
use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor;
use crate::weakloc::{load_gt, save_gt};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Topology {
    model: ModelSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gates: Option<GateConfig>,
}

fn write_buffer(dir: &Path, name: &str, v: &[f32]) -> Result<()> {
    if v.is_empty() {
        return Ok(());
    }
    write_container(&Tensor::from_vec(&[v.len()], v.to_vec())?, dir.join(name))
}

fn read_buffer(dir: &Path, name: &str, len: usize) -> Result<Vec<f32>> {
    if len == 0 {
        return Ok(Vec::new());
    }
    let path = dir.join(name);
    let t = read_container(&path)?;
    if t.len() != len {
        return Err(Error::format(&path, FormatError::Header(format!("expected {len} values, found {}", t.len()))));
    }
    Ok(t.into_data())
}

fn write_layers(dir: &Path, prefix: &str, layers: &[LayerParams<f32>]) -> Result<()> {
    for (i, l) in layers.iter().enumerate() {
        write_buffer(dir, &format!("{prefix}_{i:02}_weight.atc"), &l.weight)?;
        write_buffer(dir, &format!("{prefix}_{i:02}_bias.atc"), &l.bias)?;
    }
    Ok(())
}

fn read_layers(dir: &Path, prefix: &str, shapes: &[LayerParams<f32>]) -> Result<Vec<LayerParams<f32>>> {
    shapes
        .iter()
        .enumerate()
        .map(|(i, z)| {
            Ok(LayerParams {
                weight: read_buffer(dir, &format!("{prefix}_{i:02}_weight.atc"), z.weight.len())?,
                bias: read_buffer(dir, &format!("{prefix}_{i:02}_bias.atc"), z.bias.len())?,
            })
        })
        .collect()
}

pub fn save_model(model: &Model<f32>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let topo = Topology { model: model.net.spec.clone(), gates: model.gates.as_ref().map(|g| g.config.clone()) };
    let path = dir.join("topology.json");
    std::fs::write(&path, serde_json::to_string_pretty(&topo).expect("topology serializes")).map_err(|e| Error::io(&path, e))?;
    write_layers(dir, "layer", &model.net.params.layers)?;
    if let Some(g) = &model.gates {
        write_layers(dir, "gate", &g.heads)?;
    }
    Ok(())
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<Model<f32>> {
    let dir = dir.as_ref();
    let path = dir.join("topology.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let topo: Topology =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, FormatError::Document(e.to_string())))?;
    let zeros = Params::<f32>::zeros(&topo.model)?;
    let params = Params { layers: read_layers(dir, "layer", &zeros.layers)? };
    let net = Network::new(topo.model, params)?;
    let gates = match topo.gates {
        Some(cfg) => {
            let z = GateHeads::zeros(&net, cfg.clone())?;
            let heads = read_layers(dir, "gate", &z.heads)?;
            Some(GateHeads::with_heads(&net, cfg, heads)?)
        }
        None => None,
    };
    Ok(Model { net, gates })
}

pub fn save_dataset(set: &SyntheticVideoSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_container(&set.clips, dir.join("clips.atc"))?;
    let path = dir.join("labels.json");
    let labels = serde_json::json!({ "seed": set.seed, "classes": set.classes, "labels": set.labels });
    std::fs::write(&path, serde_json::to_string_pretty(&labels).expect("labels serialize")).map_err(|e| Error::io(&path, e))?;
    save_gt(&set.gt_records(|i| set.clip_id(i)), dir.join("boxes.jsonl"))
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<SyntheticVideoSet> {
    #[derive(Deserialize)]
    struct Labels {
        seed: u64,
        classes: usize,
        labels: Vec<usize>,
    }
    let dir = dir.as_ref();
    let clips = read_container(dir.join("clips.atc"))?;
    let path = dir.join("labels.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let l: Labels = serde_json::from_str(&text).map_err(|e| Error::format(&path, FormatError::Document(e.to_string())))?;
    let gt = load_gt(dir.join("boxes.jsonl"))?;
    let set_len = l.labels.len();
    if clips.rank() != 5 || clips.dims()[0] != set_len {
        return Err(Error::dim(format!("clips {:?} for {set_len} labels", clips.dims())));
    }
    let mut probe = SyntheticVideoSet { clips, labels: l.labels, boxes: Vec::new(), seed: l.seed, classes: l.classes };
    probe.boxes = (0..set_len)
        .map(|i| {
            let id = probe.clip_id(i);
            let clip = gt.get(&id).ok_or_else(|| Error::Lookup(format!("no boxes for {id}")))?;
            clip.frames
                .iter()
                .map(|b| b.first().copied().ok_or_else(|| Error::Lookup(format!("{id}: frame without a box"))))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(probe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::gate::GateConfig;
    use crate::net::synth::{gen_synthetic_videos, SynthConfig};

    #[test]
    fn model_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let net = Network::<f32>::init(ModelSpec::reference(4, [1, 8, 8, 8]), 3).unwrap();
        let gates = GateHeads::init(&net, GateConfig::new(&["conv", "layer2"], 2), 1).unwrap();
        let model = Model { net, gates: Some(gates) };
        save_model(&model, dir.path()).unwrap();
        let back = load_model(dir.path()).unwrap();
        assert_eq!(back.net.params, model.net.params);
        assert_eq!(back.gates.as_ref().unwrap().heads, model.gates.as_ref().unwrap().heads);
        std::fs::remove_file(dir.path().join("layer_00_bias.atc")).unwrap();
        assert!(matches!(load_model(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let set = gen_synthetic_videos(&SynthConfig::new(5, 2)).unwrap();
        save_dataset(&set, dir.path()).unwrap();
        assert_eq!(load_dataset(dir.path()).unwrap(), set);
    }
}
