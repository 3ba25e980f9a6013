//! File formats, synthetic test scenes and the end-to-end workflow on top
//! of the `lodtherm` core.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod run;
pub mod synth;

pub use error::{ExitClass, PipelineError, Result};
pub use run::{register, run_pipeline, Manifest, PipelineConfig, RegistrationConfig, RegistrationSummary};
