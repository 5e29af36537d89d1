//! Click-through-rate model that brings frozen text and image embeddings in
//! at the level of individual clicks.
//!
//! Every history click is scored against the target item per modality; the
//! scores are encoded with their recency ([`mieu`]), attended within and
//! across modalities ([`mifu`]) and, during training only, decoded back into a
//! (time × similarity) click histogram ([`iddu`]). An ID-only target-attention
//! backbone and the prediction head live in [`backbone`]; [`model`] wires the
//! full network and its ablations, [`harness`] trains and evaluates it.

pub mod autograd;
pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod error;
pub mod harness;
pub mod iddu;
pub mod metrics;
pub mod mieu;
pub mod mifu;
pub mod model;
pub mod params;

pub use checkpoint::Checkpoint;
pub use config::{Ablation, DnnPreset, ModelConfig, RunConfig};
pub use error::{DmaeError, Result};
pub use metrics::{auc, gauc_pv, logloss, EvalRecord, MetricsReport};
pub use model::{DmaeModel, Mode};
