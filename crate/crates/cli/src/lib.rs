//! File formats, configuration, synthetic data and the commands behind the
//! `spectrapipe` binary.

pub mod commands;
pub mod config;
pub mod data;
pub mod formats;
pub mod synth;
