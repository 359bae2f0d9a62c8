//! A self-contained modular image captioner trained on synthetic scenes.
//!
//! The crate bundles everything needed to run end to end on a single CPU:
//! a tape-based reverse-mode autodiff engine, synthetic scene generation with
//! per-word subcategory annotations, a three-LSTM captioning model with region
//! attention, stacked noisy-or object detection, five specialized attribute
//! modules composed by an adaptive attention gate, the full training loop, and
//! a caption evaluation suite (BLEU, ROUGE-L, CIDEr, subcategory tuple
//! f-scores) with attention trace export.

pub mod autodiff;
pub mod captioner;
pub mod detection;
pub mod error;
pub mod gradcheck;
pub mod decode;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod modules;
pub mod optim;
pub mod scene;
pub mod supervision;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use autodiff::{Gradients, Precision, Tape, Var};
pub use error::{Error, Result};
pub use tensor::{ParamStore, Tensor};
