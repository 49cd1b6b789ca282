//! Post-embedding stack for audio-visual speaker recognition with a
//! cross-modal voice-face network.
//!
//! Everything numeric is generic over [`Scalar`] (`f64` and `f32`); the type
//! aliases at the bottom of this file fix the scalar to `f64`, which is what the
//! command-line tool and the file formats use.

pub mod backend;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod pipeline;
pub mod scalar;
pub mod store;
pub mod synth;
pub mod train;
pub mod vfnet;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use store::{EmbeddingRecord, EmbeddingStore, Label, Modality, ScoreEntry, ScoreSet, Trial, TrialSet};

pub type Embeddings = store::EmbeddingStore<f64>;
pub type Scores = store::ScoreSet<f64>;
pub type VfNet = vfnet::VfNetParams<f64>;
pub type VfNet32 = vfnet::VfNetParams<f32>;
pub type Lda = backend::LdaTransform<f64>;
pub type Plda = backend::PldaModel<f64>;
pub type SpeakerBackend = backend::SpeakerBackend<f64>;
pub type Fusion = fusion::FusionModel<f64>;
pub type Dcf = metrics::DcfParams<f64>;
