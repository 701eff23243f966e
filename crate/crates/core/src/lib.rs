//! Optimized dynamical-decoupling sequences.
//!
//! Builds sets of π-pulse sequences that minimize the area under the
//! dephasing filter function, predicts coherence under classical noise
//! spectra, and scales a sequence set to an unknown noise cutoff with a
//! single-parameter feedback search.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod coherence;
pub mod error;
pub mod filter;
pub mod optimize;
pub mod par;
pub mod quadrature;
pub mod sequence;
pub mod spectrum;

pub use coherence::{CoherenceResult, DecoherenceCurve, Strategy};
pub use error::{Error, Result};
pub use filter::FilterEvalContext;
pub use optimize::{OptimizerConfig, TauGrid};
pub use sequence::{Generator, PulseSequence, SequenceSet, SetEntry};
pub use spectrum::{Cutoff, NoiseSpectrum};
