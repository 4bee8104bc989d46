//! Pipeline plumbing for the `mam` command: run configuration, manifests,
//! the feature cache, synthetic corpora and the subcommand implementations.

pub mod cache;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod synth;
