use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::boxes::{boxes_at_threshold, iou, normalized_frames, BBox, Connectivity, Frame};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PointingMode {
    /// Hit iff the peak pixel lies in a ground-truth box.
    Peak,
    /// Hit iff any box at the 0.5 contour overlaps a ground-truth box.
    AnyOverlap,
}

pub const OVERLAP_TAU: f64 = 0.5;

/// Pointing-game outcome for one frame.
pub fn pointing_hit(frame: &Frame, gt: &[BBox], mode: PointingMode, conn: Connectivity) -> Result<bool> {
    if gt.is_empty() {
        return Err(Error::arg("pointing game needs at least one ground-truth box"));
    }
    Ok(match mode {
        PointingMode::Peak => {
            let (x, y) = frame.peak();
            gt.iter().any(|b| b.contains(x, y))
        }
        PointingMode::AnyOverlap => boxes_at_threshold(frame, OVERLAP_TAU, conn)
            .iter()
            .any(|p| gt.iter().any(|g| p.intersection(g) > 0)),
    })
}

pub fn accuracy(hits: usize, misses: usize) -> Result<f64> {
    if hits + misses == 0 {
        return Err(Error::arg("accuracy of zero samples"));
    }
    Ok(hits as f64 / (hits + misses) as f64)
}

/// Hit rate where a hit only counts if the sample was also classified correctly.
pub fn acc2(hits: &[bool], correct: &[bool]) -> Result<f64> {
    if hits.len() != correct.len() {
        return Err(Error::arg(format!("{} outcomes but {} labels", hits.len(), correct.len())));
    }
    let n = hits.iter().zip(correct).filter(|(&h, &c)| h && c).count();
    accuracy(n, hits.len() - n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMode {
    /// Each frame takes its own best threshold.
    #[default]
    BestIou,
    /// One threshold per IoU level, chosen to maximise dataset accuracy.
    AllContours,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub taus: Vec<f64>,
    pub thetas: Vec<f64>,
    pub mode: EvalMode,
    pub connectivity: Connectivity,
    pub pointing: PointingMode,
    /// Also score the other pointing mode.
    #[serde(default)]
    pub report_both_pointing: bool,
}

pub fn default_taus() -> Vec<f64> {
    (0..=100).map(|i| i as f64 / 100.0).collect()
}

pub const IMAGE_THETAS: [f64; 3] = [0.3, 0.5, 0.7];
pub const VIDEO_THETAS: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5];

impl EvalConfig {
    pub fn video() -> Self {
        EvalConfig {
            taus: default_taus(),
            thetas: VIDEO_THETAS.to_vec(),
            mode: EvalMode::BestIou,
            connectivity: Connectivity::Eight,
            pointing: PointingMode::Peak,
            report_both_pointing: false,
        }
    }

    pub fn image() -> Self {
        EvalConfig { thetas: IMAGE_THETAS.to_vec(), mode: EvalMode::AllContours, ..Self::video() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taus.is_empty() || self.taus.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::arg("taus must be a non-empty subset of [0, 1]"));
        }
        if self.taus.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::arg("taus must be sorted"));
        }
        if self.thetas.is_empty() || self.thetas.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return Err(Error::arg("thetas must be a non-empty subset of (0, 1]"));
        }
        Ok(())
    }
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self::video()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaAccuracy {
    pub theta: f64,
    pub accuracy: f64,
    /// Selected threshold in all-contours mode.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxAccuracy {
    pub per_theta: Vec<ThetaAccuracy>,
    pub mean: f64,
    /// Best IoU of each frame over every threshold and box.
    pub best_iou: Vec<f64>,
}

/// Best IoU of any box at `tau` against any ground-truth box.
fn frame_iou(frame: &Frame, gt: &[BBox], tau: f64, conn: Connectivity) -> f64 {
    boxes_at_threshold(frame, tau, conn)
        .iter()
        .flat_map(|p| gt.iter().map(move |g| iou(p, g)))
        .fold(0.0, f64::max)
}

/// Box accuracy of pre-normalized frames against their ground truth.
pub fn max_box_acc(frames: &[Frame], gt: &[Vec<BBox>], cfg: &EvalConfig) -> Result<BoxAccuracy> {
    cfg.validate()?;
    if frames.len() != gt.len() {
        return Err(Error::arg(format!("{} frames but {} ground-truth entries", frames.len(), gt.len())));
    }
    if frames.is_empty() {
        return Err(Error::arg("no frames to evaluate"));
    }
    let table: Vec<Vec<f64>> = frames
        .par_iter()
        .zip(gt)
        .map(|(f, g)| cfg.taus.iter().map(|&tau| frame_iou(f, g, tau, cfg.connectivity)).collect())
        .collect();
    let best_iou: Vec<f64> = table.iter().map(|row| row.iter().copied().fold(0.0, f64::max)).collect();
    let n = frames.len() as f64;
    let per_theta: Vec<ThetaAccuracy> = cfg
        .thetas
        .iter()
        .map(|&theta| match cfg.mode {
            EvalMode::BestIou => ThetaAccuracy {
                theta,
                accuracy: best_iou.iter().filter(|&&v| v >= theta).count() as f64 / n,
                tau: None,
            },
            EvalMode::AllContours => {
                let (k, count) = (0..cfg.taus.len())
                    .map(|k| (k, table.iter().filter(|row| row[k] >= theta).count()))
                    .fold((0, 0), |best, cur| if cur.1 > best.1 { cur } else { best });
                ThetaAccuracy { theta, accuracy: count as f64 / n, tau: Some(cfg.taus[k]) }
            }
        })
        .collect();
    let mean = per_theta.iter().map(|t| t.accuracy).sum::<f64>() / per_theta.len() as f64;
    Ok(BoxAccuracy { per_theta, mean, best_iou })
}

/// One clip's saliency with per-frame ground truth.
#[derive(Debug, Clone)]
pub struct ClipEval {
    pub clip_id: String,
    /// `T×H×W` saliency.
    pub saliency: Tensor,
    /// Boxes per frame; frames without boxes are not scored.
    pub gt: Vec<Vec<BBox>>,
    /// Whether the clip was classified correctly, if known.
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointingScore {
    pub mode: PointingMode,
    pub hits: usize,
    pub misses: usize,
    pub accuracy: f64,
    pub acc2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameIou {
    pub clip_id: String,
    pub frame: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub clips: usize,
    pub frames: usize,
    pub hits: usize,
    pub misses: usize,
    pub hit_point_acc: f64,
    pub acc2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub secondary_pointing: Option<PointingScore>,
    pub per_theta: Vec<ThetaAccuracy>,
    pub mean_box_acc: f64,
    pub best_iou: Vec<FrameIou>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per IoU threshold.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("theta,accuracy,tau\n");
        for t in &self.per_theta {
            let tau = t.tau.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", t.theta, t.accuracy, tau));
        }
        out
    }
}

fn pointing_score(
    frames: &[(usize, Frame, &[BBox], Option<bool>)],
    mode: PointingMode,
    conn: Connectivity,
) -> Result<PointingScore> {
    let hits: Vec<bool> = frames.iter().map(|(_, f, g, _)| pointing_hit(f, g, mode, conn)).collect::<Result<_>>()?;
    let n_hits = hits.iter().filter(|&&h| h).count();
    let correct: Option<Vec<bool>> = frames.iter().map(|(_, _, _, c)| *c).collect();
    Ok(PointingScore {
        mode,
        hits: n_hits,
        misses: hits.len() - n_hits,
        accuracy: accuracy(n_hits, hits.len() - n_hits)?,
        acc2: correct.map(|c| acc2(&hits, &c)).transpose()?,
    })
}

/// Pointing game and box accuracy over a set of clips. Each clip is
/// renormalized by its own maximum before thresholding.
pub fn evaluate(clips: &[ClipEval], cfg: &EvalConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let mut scored: Vec<(usize, Frame, &[BBox], Option<bool>)> = Vec::new();
    let mut ids = Vec::new();
    for clip in clips {
        let frames = normalized_frames(&clip.saliency)?;
        if clip.gt.len() > frames.len() {
            return Err(Error::arg(format!(
                "clip {:?}: ground truth for {} frames, saliency has {}",
                clip.clip_id,
                clip.gt.len(),
                frames.len()
            )));
        }
        for (i, (frame, gt)) in frames.into_iter().zip(&clip.gt).enumerate() {
            if !gt.is_empty() {
                if gt.iter().any(|b| !b.fits(frame.width, frame.height)) {
                    return Err(Error::arg(format!("clip {:?} frame {i}: box outside the frame", clip.clip_id)));
                }
                scored.push((i, frame, gt, clip.correct));
                ids.push(clip.clip_id.clone());
            }
        }
    }
    if scored.is_empty() {
        return Err(Error::arg("no frames with ground truth"));
    }
    let primary = pointing_score(&scored, cfg.pointing, cfg.connectivity)?;
    let secondary = if cfg.report_both_pointing {
        let other = match cfg.pointing {
            PointingMode::Peak => PointingMode::AnyOverlap,
            PointingMode::AnyOverlap => PointingMode::Peak,
        };
        Some(pointing_score(&scored, other, cfg.connectivity)?)
    } else {
        None
    };
    let frames: Vec<Frame> = scored.iter().map(|(_, f, _, _)| f.clone()).collect();
    let gts: Vec<Vec<BBox>> = scored.iter().map(|(_, _, g, _)| g.to_vec()).collect();
    let boxes = max_box_acc(&frames, &gts, cfg)?;
    let best_iou = scored
        .iter()
        .zip(ids)
        .zip(&boxes.best_iou)
        .map(|(((frame, ..), clip_id), &iou)| FrameIou { clip_id, frame: *frame, iou })
        .collect();
    Ok(EvalReport {
        config: cfg.clone(),
        clips: clips.len(),
        frames: scored.len(),
        hits: primary.hits,
        misses: primary.misses,
        hit_point_acc: primary.accuracy,
        acc2: primary.acc2,
        secondary_pointing: secondary,
        per_theta: boxes.per_theta,
        mean_box_acc: boxes.mean,
        best_iou,
    })
}
