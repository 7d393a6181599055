//! Command-line workflows around `spatiotag-core`: configuration, the
//! two-stage FHMM-G pipeline, simulated active-learning experiments and the
//! annotation service.

pub mod commands;
pub mod config;
pub mod data;
pub mod experiment;
pub mod pipeline;
pub mod service;
pub mod session;
pub mod tagger;
