//! Weakly-supervised localization scoring: contour boxes, IoU, the pointing
//! game and threshold-swept box accuracy.

mod boxes;
mod gt;
mod metrics;

pub use boxes::{boxes_at_threshold, iou, normalized_frames, BBox, Connectivity, Frame};
pub use gt::{group_by_clip, load_gt, parse_gt_jsonl, save_gt, to_gt_jsonl, ClipGt, GtRecord};
pub use metrics::{
    acc2, accuracy, default_taus, evaluate, max_box_acc, pointing_hit, BoxAccuracy, ClipEval, EvalConfig, EvalMode,
    EvalReport, FrameIou, PointingMode, PointingScore, ThetaAccuracy, IMAGE_THETAS, OVERLAP_TAU, VIDEO_THETAS,
};
