//! File formats, data handling, training, evaluation and the command-line
//! front end built on [`voxelseg_core`].

pub mod cli;
pub mod config;
pub mod dataset;
pub mod evalkit;
pub mod format;
pub mod source;
pub mod trainer;

