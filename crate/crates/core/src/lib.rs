//! Attentive cross-modal connections (AttX) between an ECG and an EDA
//! 1D-CNN stream, built on a small define-by-run autodiff engine.
//!
//! Layout:
//!
//! * [`tensor`], [`autograd`], [`optim`], [`checkpoint`], [`gradcheck`]:
//!   dense f64 tensors, reverse-mode differentiation, Adam and the
//!   checkpoint format.
//! * [`signal`]: Butterworth filtering, per-subject z-scoring,
//!   resampling to 256 Hz and 10 s windowing.
//! * [`attention`]: the AttX block (stacking, attention weights,
//!   weighting and the Type I/II/III cross connections).
//! * [`model`]: the SE-ResNet ECG stream, the CNN EDA stream and the
//!   classifier head.
//! * [`train`]: training loop, metrics, LOSO evaluation and the
//!   ablation runner.
//! * [`data`]: ingestion, synthetic recordings, the windowed dataset
//!   file and experiment configuration.
//!
//! Data-parallel inner loops (batch elements in convolutions,
//! per-subject preprocessing, LOSO folds) run on rayon when the
//! `parallel` feature is enabled; see [`par`].

pub mod attention;
pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod optim;
pub mod par;
pub mod rng;
pub mod signal;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;
