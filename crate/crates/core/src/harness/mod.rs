//! Datasets, image files, RD metrics, evaluation and complexity measurement.

pub mod complexity;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod image_io;
pub mod metrics;
pub mod report;
