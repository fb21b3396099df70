//! Hyperspectral image classification with an asymmetric inception network.
//!
//! The crate covers the whole pipeline: loading and normalizing labeled
//! hyperspectral scenes ([`hsi_data`]), the network itself ([`model`]),
//! supervised training ([`train_engine`]), cross-scene pre-training and
//! fine-tuning ([`transfer`]) and accuracy reporting ([`metrics`]).

pub mod error;
pub mod hsi_data;
pub mod metrics;
pub mod model;
pub mod selfcheck;
pub mod synthetic;
pub mod tensor;
pub mod train_engine;
pub mod transfer;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
