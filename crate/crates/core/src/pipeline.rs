//! File-level workflows: attribution of exported records, evaluation of a
//! saliency directory, overlay rendering and the synthetic training demo.
//!
//! A saliency directory holds `<clip_id>.atc` volumes with optional
//! `<clip_id>.json` sidecars ([`SaliencyMeta`]). Every function writes only
//! below the output directory it is given.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cam::attribute_clip;
use crate::container::{read_container, write_container};
use crate::error::{Error, FormatError, Result};
use crate::interp::UpsampleSpec;
use crate::manifest::{AttributionManifest, ManifestLayer};
use crate::net::{
    gen_synthetic_videos, model_records, save_dataset, save_model, Batch, ClassSelect, GateConfig, GateHeads,
    Hyperparams, Model, ModelSpec, Network, SynthConfig, SyntheticVideoSet, Trainer,
};
use crate::tensor::Tensor;
use crate::viz::{colorize, overlay, overlay_name, write_ppm, RgbImage};
use crate::weakloc::{evaluate, load_gt, ClipEval, EvalConfig, EvalReport};

/// Sidecar written next to each saliency volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaliencyMeta {
    pub clip_id: String,
    pub pred_class: i64,
    pub pred_score: f64,
    pub layers: Vec<String>,
    pub target_dims: Vec<usize>,
    pub gaussian_sigma: f64,
    #[serde(default)]
    pub counterfactual: bool,
}

#[derive(Debug, Clone)]
pub struct SaliencyEntry {
    pub clip_id: String,
    pub saliency: Tensor,
    pub meta: Option<SaliencyMeta>,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<S: Serialize>(value: &S, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes") + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Aggregates the `layers` of a manifest and writes `<clip_id>.atc` plus its
/// sidecar into `out`. Returns the volume path.
pub fn attribute_to_dir(manifest_path: &Path, layers: &[String], spec: &UpsampleSpec, out: &Path) -> Result<PathBuf> {
    if layers.is_empty() {
        return Err(Error::arg("layer selection is empty"));
    }
    let manifest = AttributionManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let selected: Vec<&str> = layers.iter().map(String::as_str).collect();
    let vol = attribute_clip(&manifest, base, &selected, spec)?;
    create_dir(out)?;
    let path = out.join(format!("{}.atc", manifest.clip_id));
    write_container(&vol.values, &path)?;
    let meta = SaliencyMeta {
        clip_id: manifest.clip_id.clone(),
        pred_class: manifest.pred_class,
        pred_score: manifest.pred_score,
        layers: vol.layers,
        target_dims: manifest.target_dims.clone(),
        gaussian_sigma: spec.gaussian_sigma,
        counterfactual: manifest.counterfactual,
    };
    write_json(&meta, &out.join(format!("{}.json", manifest.clip_id)))?;
    Ok(path)
}

/// Every `*.atc` volume of a saliency directory, sorted by clip id.
pub fn load_saliency_dir(dir: &Path) -> Result<Vec<SaliencyEntry>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "atc"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Lookup(format!("no saliency volumes in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let clip_id = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let saliency = read_container(&p)?;
            let side = p.with_extension("json");
            let meta = if side.exists() {
                let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
                Some(serde_json::from_str(&text).map_err(|e| Error::format(&side, FormatError::Document(e.to_string())))?)
            } else {
                None
            };
            Ok(SaliencyEntry { clip_id, saliency, meta })
        })
        .collect()
}

/// `T×H×W` view; `H×W` images become a single frame.
fn as_volume(t: &Tensor) -> Result<Tensor> {
    let d = t.dims();
    match d.len() {
        2 => t.reshape(&[1, d[0], d[1]]),
        3 => Ok(t.clone()),
        _ if d.len() > 3 && d[..d.len() - 3].iter().all(|&x| x == 1) => t.reshape(&d[d.len() - 3..]),
        _ => Err(Error::dim(format!("expected T×H×W or H×W, got {d:?}"))),
    }
}

/// Scores a saliency directory against JSON-lines ground truth. A clip is
/// counted as correctly classified when its sidecar's predicted class equals
/// the ground-truth class.
pub fn evaluate_dir(saliency_dir: &Path, gt_path: &Path, cfg: &EvalConfig) -> Result<EvalReport> {
    let gt = load_gt(gt_path)?;
    let clips = load_saliency_dir(saliency_dir)?
        .into_iter()
        .map(|e| {
            let g = gt.get(&e.clip_id).ok_or_else(|| Error::Lookup(format!("no ground truth for {:?}", e.clip_id)))?;
            Ok(ClipEval {
                correct: e.meta.as_ref().map(|m| m.pred_class == g.class as i64),
                saliency: as_volume(&e.saliency)?,
                gt: g.frames.clone(),
                clip_id: e.clip_id,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(&clips, cfg)
}

/// Heatmap-over-frame images for one clip; the heatmap is the saliency
/// divided by its clip-level maximum.
pub fn render_overlays(saliency: &Tensor, frames: &Tensor, alpha: f64) -> Result<Vec<RgbImage>> {
    let sal = as_volume(saliency)?;
    let frames = as_volume(frames)?;
    if sal.dims() != frames.dims() {
        return Err(Error::dim(format!("saliency {:?} vs frames {:?}", sal.dims(), frames.dims())));
    }
    let m = sal.data().iter().copied().fold(0f32, f32::max) as f64;
    let heat = if m > 0.0 { sal.map(|v| (v as f64 / m) as f32) } else { sal };
    (0..frames.dims()[0])
        .into_par_iter()
        .map(|f| {
            let h = colorize(&heat.index_outer(f)?)?;
            overlay(&RgbImage::from_gray(&frames.index_outer(f)?)?, &h, alpha)
        })
        .collect()
}

/// Writes `<clip_id>_f<frame>_overlay.ppm` for every clip of a saliency
/// directory, reading gray `<clip_id>.atc` frames in `[0, 1]` from `frames_dir`.
pub fn overlay_dir(saliency_dir: &Path, frames_dir: &Path, alpha: f64, out: &Path) -> Result<Vec<PathBuf>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} outside [0, 1]")));
    }
    let entries = load_saliency_dir(saliency_dir)?;
    create_dir(out)?;
    let mut written = Vec::new();
    for e in entries {
        let frames = read_container(frames_dir.join(format!("{}.atc", e.clip_id)))?;
        for (f, img) in render_overlays(&e.saliency, &frames, alpha)?.into_iter().enumerate() {
            let path = out.join(overlay_name(&e.clip_id, f));
            write_ppm(&img, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Taps the demo network exposes, in manifest order.
pub const DEMO_TAPS: [&str; 3] = ["conv", "layer1", "layer2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    pub seed: u64,
    pub epochs: usize,
    pub gated: bool,
    pub per_class: usize,
    pub test_fraction: f64,
    pub lr: f64,
    /// Temporal pooling factor of the gate heads.
    pub temporal_factor: usize,
    /// Number of test clips to dump records for.
    pub dumps: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            seed: 0,
            epochs: 6,
            gated: false,
            per_class: 200,
            test_fraction: 0.2,
            lr: Hyperparams::default().lr,
            temporal_factor: 2,
            dumps: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoEpoch {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoSummary {
    pub config: DemoConfig,
    pub parameters: usize,
    pub train_clips: usize,
    pub test_clips: usize,
    pub test_accuracy: f64,
    pub epochs: Vec<DemoEpoch>,
}

/// A trained demo model with its held-out clips.
pub struct DemoRun {
    pub model: Model<f32>,
    pub test: SyntheticVideoSet,
    pub summary: DemoSummary,
}

/// Generates the synthetic set, trains the reference network (gated or not)
/// and scores the held-out split after every epoch.
pub fn run_demo(cfg: &DemoConfig) -> Result<DemoRun> {
    let set = gen_synthetic_videos(&SynthConfig::new(cfg.seed, cfg.per_class))?;
    let (tr, te) = set.split_indices(cfg.test_fraction);
    let (train_set, test) = (set.subset(&tr)?, set.subset(&te)?);
    let d = &set.clips.dims()[1..];
    let net = Network::<f32>::init(ModelSpec::reference(set.classes, [d[0], d[1], d[2], d[3]]), cfg.seed)?;
    let gates = if cfg.gated {
        Some(GateHeads::init(&net, GateConfig::new(&DEMO_TAPS, cfg.temporal_factor), cfg.seed)?)
    } else {
        None
    };
    let train_batch = Batch::from_tensor(&net, &train_set.clips, &train_set.labels)?;
    let test_batch = Batch::from_tensor(&net, &test.clips, &test.labels)?;
    let parameters = net.params.len() + gates.as_ref().map_or(0, |g| g.heads.iter().map(|h| h.len()).sum());
    let hp = Hyperparams { lr: cfg.lr, epochs: cfg.epochs, seed: cfg.seed, ..Default::default() };
    let mut trainer = Trainer::new(Model { net, gates }, hp)?;
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let log = trainer.run_epoch(&train_batch)?.clone();
        epochs.push(DemoEpoch {
            epoch: log.epoch,
            lr: log.lr,
            train_loss: log.train_loss,
            test_accuracy: trainer.model.accuracy(&test_batch),
        });
    }
    let test_accuracy = trainer.model.accuracy(&test_batch);
    let summary = DemoSummary {
        config: cfg.clone(),
        parameters,
        train_clips: train_set.len(),
        test_clips: test.len(),
        test_accuracy,
        epochs,
    };
    Ok(DemoRun { model: trainer.model, test, summary })
}

/// Writes a manifest with alpha/grad containers for test clip `i` into `dir`.
pub fn dump_records(model: &Model<f32>, test: &SyntheticVideoSet, i: usize, dir: &Path) -> Result<AttributionManifest> {
    let clip = test.clip(i)?;
    let mut dims = vec![1];
    dims.extend_from_slice(clip.dims());
    let r = model_records(model, &clip.reshape(&dims)?, ClassSelect::Argmax)?;
    create_dir(dir)?;
    let mut layers = Vec::new();
    for rec in &r.records {
        let (a, g) = (format!("{}_alpha.atc", rec.layer_id), format!("{}_grad.atc", rec.layer_id));
        write_container(&rec.alpha, dir.join(&a))?;
        write_container(&rec.grad, dir.join(&g))?;
        layers.push(ManifestLayer { id: rec.layer_id.clone(), alpha: a, grad: g });
    }
    let manifest = AttributionManifest {
        clip_id: test.clip_id(i),
        pred_class: r.class as i64,
        pred_score: r.score,
        target_dims: clip.dims()[1..].to_vec(),
        layers,
        counterfactual: false,
    };
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Runs the demo and writes `model/`, `dataset/` (held-out split),
/// `dumps/<clip_id>/`, `frames/<clip_id>.atc`, `accuracy.jsonl` and
/// `summary.json` below `out`.
pub fn train_demo(cfg: &DemoConfig, out: &Path) -> Result<DemoSummary> {
    let run = run_demo(cfg)?;
    create_dir(out)?;
    save_model(&run.model, out.join("model"))?;
    save_dataset(&run.test, out.join("dataset"))?;
    let frames_dir = out.join("frames");
    create_dir(&frames_dir)?;
    for i in 0..cfg.dumps.min(run.test.len()) {
        let id = run.test.clip_id(i);
        dump_records(&run.model, &run.test, i, &out.join("dumps").join(&id))?;
        write_container(&as_volume(&run.test.clip(i)?)?, frames_dir.join(format!("{id}.atc")))?;
    }
    let log: String = run
        .summary
        .epochs
        .iter()
        .map(|e| serde_json::to_string(e).expect("epoch serializes") + "\n")
        .collect();
    let path = out.join("accuracy.jsonl");
    std::fs::write(&path, log).map_err(|e| Error::io(&path, e))?;
    write_json(&run.summary, &out.join("summary.json"))?;
    Ok(run.summary)
}
