//! Ground-truth boxes as JSON lines, one record per frame.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::boxes::BBox;
use crate::error::{Error, FormatError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GtRecord {
    pub clip_id: String,
    pub frame: usize,
    pub class: usize,
    pub boxes: Vec<BBox>,
}

/// Ground truth of one clip, indexed by frame.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClipGt {
    pub class: usize,
    pub frames: Vec<Vec<BBox>>,
}

pub fn parse_gt_jsonl(text: &str) -> Result<Vec<GtRecord>, FormatError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| FormatError::Document(format!("line {}: {e}", i + 1))))
        .collect()
}

pub fn to_gt_jsonl(records: &[GtRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("record serializes") + "\n").collect()
}

/// Groups records by clip; a clip's class must agree across its frames and a
/// frame may appear once.
pub fn group_by_clip(records: &[GtRecord]) -> Result<BTreeMap<String, ClipGt>, FormatError> {
    let mut out: BTreeMap<String, ClipGt> = BTreeMap::new();
    let mut seen = std::collections::BTreeSet::new();
    for r in records {
        if !seen.insert((r.clip_id.as_str(), r.frame)) {
            return Err(FormatError::Document(format!("clip {:?} frame {} listed twice", r.clip_id, r.frame)));
        }
        let entry = out.entry(r.clip_id.clone()).or_insert_with(|| ClipGt { class: r.class, frames: Vec::new() });
        if entry.class != r.class {
            return Err(FormatError::Document(format!("clip {:?} has classes {} and {}", r.clip_id, entry.class, r.class)));
        }
        if entry.frames.len() <= r.frame {
            entry.frames.resize(r.frame + 1, Vec::new());
        }
        entry.frames[r.frame] = r.boxes.clone();
    }
    Ok(out)
}

pub fn load_gt(path: impl AsRef<Path>) -> Result<BTreeMap<String, ClipGt>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_gt_jsonl(&text).and_then(|r| group_by_clip(&r)).map_err(|e| Error::format(path, e))
}

pub fn save_gt(records: &[GtRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_gt_jsonl(records)).map_err(|e| Error::io(path, e))
}
