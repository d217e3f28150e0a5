//! TeleViT: a vision transformer that fuses fine-scale local fields,
//! coarsened global fields and teleconnection-index time series through
//! asymmetric tokenization, for subseasonal burned-area forecasting.
//!
//! The crate is organised bottom-up:
//!
//! * [`datacube`] holds the spatiotemporal cube, preprocessing and sample
//!   extraction, plus a synthetic cube generator and the on-disk store.
//! * [`tokenizer`], [`encoder`] and [`decoder`] make up the network, which
//!   [`model`] assembles together with its backward pass.
//! * [`training`] has the loss, schedule, optimizer, loop and checkpoints.
//! * [`evaluation`] computes AUPRC, the climatology baseline and regional
//!   reports.
//! * [`inspection`] implements attention roll-out and integrated gradients.

pub mod config;
pub mod datacube;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod inspection;
pub mod model;
pub mod nn;
pub mod tokenizer;
pub mod training;

pub use datacube::{CubeStore, NormalizationStats, Sample, SampleIndex, Split};
pub use decoder::PredictionMap;
pub use encoder::{AttentionRecord, EncoderConfig};
pub use error::{Error, Result};
pub use model::{ModelConfig, ModelInput, TeleVit};
pub use tokenizer::{Segment, TokenSequence, TokenizationSpec};
