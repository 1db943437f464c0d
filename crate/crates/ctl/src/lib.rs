//! Std companion to `ctl-core`: file formats, checkpoint IO, dataset
//! loading, experiment pipelines and the `ctl` command-line tool.

pub mod checkpoint_io;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod pipeline;
pub mod pnm;
pub mod sweep;
pub mod tables;

pub use error::{CtlError, Result};
