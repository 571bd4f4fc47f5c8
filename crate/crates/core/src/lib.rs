//! Multimodal emotion recognition in conversation.
//!
//! Each dialogue's utterances carry fused audio/text/video features. A
//! transformer encoder without positional encodings contextualises them, a
//! speaker- and direction-typed graph connects utterances inside a sliding
//! window, relational graph convolution plus graph attention refine the node
//! features, and a small classifier predicts one emotion per utterance.
//!
//! Everything runs on a small reverse-mode autodiff [`Tape`] over dense `f64`
//! tensors, and all randomness flows from seeded streams, so training runs
//! are reproducible bit for bit.

pub mod analysis;
pub mod classifier;
pub mod config;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod gnn;
pub mod graph;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use config::{Ablation, TrainConfig};
pub use dataset::{
    Corpus, Dependency, Dialogue, Label, Modality, ModalityDims, ModalitySet, Split, SynthSpec,
    TaskMode, Utterance,
};
pub use error::{ErcError, Result};
pub use graph::{
    ConversationGraph, Direction, Edge, EdgeMode, GraphOptions, RelationType, TransitionLevel,
    Window,
};
pub use metrics::EvalReport;
pub use model::{ModelArch, ModelParams};
pub use params::Parameterized;
pub use tape::{DropoutCtx, Tape, Var};
pub use tensor::Tensor;
pub use train::{Checkpoint, EpochRecord, TrainOutcome};
