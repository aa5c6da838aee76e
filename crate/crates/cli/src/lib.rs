//! Command-line front end: experiment configs, datasets on disk, the
//! reconstruction pipeline and reports.

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod render;
pub mod report;
