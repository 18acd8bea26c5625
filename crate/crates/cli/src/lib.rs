//! The `tailqa` pipeline: configuration, stage manifests and stage bodies.

pub mod cli;
pub mod config;
pub mod error;
pub mod io;
pub mod manifest;
pub mod report;
pub mod stages;
pub mod synth;
