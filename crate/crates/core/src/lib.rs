//! Cross-modal variational-information-bottleneck representation learning
//! for multimodal data with missing modalities, plus relative-advantage-aware
//! regulation of the per-modality imputation weights.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`autodiff`]: dense tensors and a tape-based reverse-mode AD.
//! - [`datagen`]: synthetic multimodal datasets, presence masks, CSV storage, batching.
//! - [`model`]: self-modal encoders, cross-modal imputers, decoders, representation routing.
//! - [`losses`]: the reparameterized VIB loss, imputation MSE, and the total objective.
//! - [`regulator`]: relative advantage, moving-average losses, and the projected η update.
//! - [`trainer`]: the double loop with Adam and evaluation.
//! - [`checkpoint`]: manifest plus raw-weights checkpoint files.
//! - [`verify`]: oracle-backed self-checks used by the CLI and the test suites.

pub mod autodiff;
pub mod checkpoint;
pub mod datagen;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod regulator;
mod rng;
pub mod tensor;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use tensor::Tensor;
