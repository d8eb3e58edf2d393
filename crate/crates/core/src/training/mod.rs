//! Losses, the Adam optimizer and the training loops.

mod adam;
mod config;
mod losses;
mod loops;
mod metrics;

pub use adam::{adam_step, AdamState};
pub use config::{AdamConfig, BackendChoice, TrainConfig, CONFIG_KEYS};
pub use losses::*;
pub use loops::*;
pub use metrics::{metrics_csv, MetricsRow, METRICS_HEADER};

use crate::generators::{GenError, ImageError};
use crate::imaging::ImagingError;
use crate::models::ModelError;
use crate::numcore::NumError;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("cannot parse {value:?} for config key {key:?}")]
    Value { key: String, value: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),
    #[error("non-finite loss at step {step}; recent losses {recent:?}")]
    NonFinite { step: usize, recent: Vec<f64> },
    #[error("frozen network {0} was modified during training")]
    Frozen(&'static str),
    #[error("{0}")]
    Backend(String),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gen(#[from] GenError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
}
