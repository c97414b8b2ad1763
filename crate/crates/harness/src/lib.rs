//! Experiment harness: file formats, sweeps, ground truth and reports.

pub mod config;
pub mod formats;
pub mod report;
pub mod sweep;
pub mod truth;
