//! Sequence labeling with averaged-perceptron featurized HMMs.
//!
//! The crate is organised bottom-up:
//!
//! * [`corpus`] reads column-formatted corpora, extracts flat-tag phrases and
//!   scores predictions at the phrase level.
//! * [`features`] turns tokens into interned feature ids using the
//!   word-level and windowed templates of each task profile.
//! * [`fhmm`] holds the linear chain model and its exact decoders (Viterbi,
//!   n-best, forward-backward).
//! * [`perceptron`] trains a model with the averaged structured perceptron.
//! * [`ensemble`] bags several models and combines them either by whole
//!   sequences or by per-token marginals.
//! * [`active`] runs query-by-bagging with sequence vote entropy and
//!   sentence re-weighting.
//! * [`synthetic`] generates corpora from a planted model for experiments.

pub mod active;
pub mod corpus;
pub mod ensemble;
pub mod error;
pub mod features;
pub mod fhmm;
pub mod perceptron;
pub mod synthetic;

pub use error::{Error, Result};
