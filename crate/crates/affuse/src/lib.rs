//! File formats, run configuration and the command-line front end for
//! `affuse-core`.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod features;
pub mod label_files;
pub mod manifest;
pub mod numfmt;
pub mod report;
pub mod runlog;

pub use error::{Error, Result};
