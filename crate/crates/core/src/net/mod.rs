//! A small 3D convolutional clip classifier with exact reverse-mode
//! gradients, gated attention heads, SGD training and a synthetic dataset.

mod attrib;
mod gate;
mod gradcheck;
mod io;
mod network;
mod ops;
mod params;
mod real;
mod spec;
mod synth;
mod train;

pub use attrib::{clip_records, model_records, ClipRecords};
pub use gate::{gate_pool, gated_forward, pooled_len, Fusion, GateConfig, GateHeads, HeadRef};
pub use gradcheck::{finite_diff_check, rel_error, GradCheckConfig, GradCheckReport};
pub use io::{load_dataset, load_model, save_dataset, save_model};
pub use network::{cross_entropy, ClassSelect, ForwardTape, Network, SampleTape};
pub use params::{LayerParams, Params};
pub use real::Real;
pub use spec::{LayerDef, LayerOp, ModelSpec, INPUT_NODE};
pub use synth::{gen_synthetic_videos, SynthConfig, SyntheticVideoSet, DIRECTIONS, MAX_SIDE, MIN_SIDE};
pub use train::{train, Batch, EpochLog, Hyperparams, Model, Trainer};
