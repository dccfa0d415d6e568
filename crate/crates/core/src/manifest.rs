//! JSON manifest naming the per-layer containers for one clip.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestLayer {
    pub id: String,
    pub alpha: String,
    pub grad: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionManifest {
    pub clip_id: String,
    pub pred_class: i64,
    pub pred_score: f64,
    /// `[T, H, W]` for clips, `[H, W]` for images.
    pub target_dims: Vec<usize>,
    pub layers: Vec<ManifestLayer>,
    /// Set when the gradients were negated before export.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub counterfactual: bool,
}

impl AttributionManifest {
    pub fn validate(&self) -> Result<(), FormatError> {
        if self.layers.is_empty() {
            return Err(FormatError::Document("manifest lists no layers".into()));
        }
        if !(2..=3).contains(&self.target_dims.len()) || self.target_dims.contains(&0) {
            return Err(FormatError::Document(format!("bad target_dims {:?}", self.target_dims)));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if self.layers[..i].iter().any(|p| p.id == l.id) {
                return Err(FormatError::Document(format!("duplicate layer id {:?}", l.id)));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, FormatError> {
        let m: AttributionManifest =
            serde_json::from_str(text).map_err(|e| FormatError::Document(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::format(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn layer_ids(&self) -> Vec<&str> {
        self.layers.iter().map(|l| l.id.as_str()).collect()
    }
}
