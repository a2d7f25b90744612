//! Mel-spectrogram CNN classification with built-in explanations.
//!
//! The crate covers the whole path from cough audio to explained predictions:
//!
//! * [`audio`]: WAV decoding, augmentation, STFT/Mel spectrograms and the
//!   8-bit spectrogram images fed to the network.
//! * [`tape`] and [`tensor`]: a small reverse-mode autodiff engine.
//! * [`model`]: the classifier, Adam training with early stopping,
//!   checkpoints.
//! * [`xai`]: activation maximization, SmoothGrad, Grad-CAM, quickshift and
//!   LIME.
//! * [`dataset`]: manifests, stratified splits and a synthetic dataset with
//!   planted, known-location features.

pub mod audio;
pub mod dataset;
pub mod error;
mod kernels;
pub mod model;
pub mod plot;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod xai;

pub use error::{Error, Result};
pub use model::{build_cnn, CnnModel, Mode, TrainConfig};
pub use rng::Rng;
pub use tape::{Gradients, NodeId, Tape};
pub use tensor::Tensor;
