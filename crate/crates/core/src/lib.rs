//! DeepKey: two-factor biometric authentication from EEG and gait.
//!
//! The pipeline has three learned stages. A one-class SVM gate rejects
//! unknown subjects from raw EEG. Two attention-based encoder-decoder RNNs
//! (one per modality, identical architecture) turn 10-instance windows into
//! codes that a KNN classifier maps to subject ids. A request is approved
//! only when the gate passes and both modalities agree on the identity.
//!
//! ```text
//! raw EEG ──► gate ──► Impostor ─────────────────────────► Deny
//!                │
//!                └► Genuine ─► delta band-pass ─► RNN ─► KNN ─► E_ID ─┐
//! raw gait ──────────────────────────────────────► RNN ─► KNN ─► G_ID ─┴► E_ID == G_ID ?
//! ```
//!
//! Everything is deterministic in the configured seed. The [`synthgen`]
//! module produces synthetic cohorts for evaluation.

pub mod config;
pub mod container;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod gatekeeper;
pub mod identifier;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod synthgen;

pub use config::Config;
pub use dsp::{FilterCoefficients, Modality, Recording, Sample};
pub use error::{DeepKeyError, Result};
pub use gatekeeper::{GateModel, GateVerdict};
pub use identifier::{CodeBank, Identifier};
pub use pipeline::{AuthDecision, AuthReason, AuthRequest, System, Verdict};
