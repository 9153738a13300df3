//! Command line front end for AMP recovery with nearest-neighbor sparsity
//! pattern learning: file formats, configuration and subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod pgm;
