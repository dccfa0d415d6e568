//! Spatio-temporal class activation maps from layer activations and
//! gradients, with localization scoring and a toy 3D CNN to produce them.
//!
//! Tensors are row-major `f32`; clips are `B×C×T×H×W`, per-layer fields
//! `C×T×H×W` and saliency volumes `T×H×W` (or `H×W` for images).

pub mod cam;
pub mod container;
pub mod error;
pub mod interp;
pub mod manifest;
pub mod net;
pub mod pipeline;
pub mod tensor;
pub mod viz;
pub mod weakloc;

pub use cam::{
    aggregate, alpha_reduce, attribute_clip, attribute_records, beta_from_gradients, cam_2d, cam_layer,
    negate_gradients, normalize_relu, LayerRecord, SaliencyVolume,
};
pub use container::{read_container, write_container};
pub use error::{Error, FormatError, Result};
pub use interp::UpsampleSpec;
pub use manifest::{AttributionManifest, ManifestLayer};
pub use tensor::{channel_sum, max_all, relu_map, DType, Tensor};
