//! Training-free correction of position bias in multi-image retrieval.
//!
//! A vision-language model asked "which of these N images matches?" tends to
//! answer by position. This crate scores the label candidates from recorded
//! inference traces, estimates a per-model positional bias profile from a
//! small symmetrized calibration set, and removes the bias at inference time
//! using the model's own image attention as evidence of where it looked.

pub mod baselines;
pub mod benchgen;
pub mod calibration;
pub mod debias;
pub mod error;
pub mod evaluation;
pub mod experiment;
pub mod manifest;
pub mod numeric;
pub mod scoring;
pub mod seeds;
pub mod synthetic;
pub mod trace;

pub use calibration::{build_profile, CalibrationOptions, CalibrationProfile};
pub use debias::{predict, DebiasConfig, DebiasResult, LayerStrategy};
pub use error::{Error, Result};
pub use scoring::{score_candidates, CandidateProbabilities};
pub use trace::{read_traces, write_trace, InferenceTrace, LabelScheme, TraceRecord};
