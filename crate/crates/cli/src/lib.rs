//! Batch companion to `speechtraits-core`: file formats, checkpoints, and
//! the command-line subcommands behind the `speechtraits` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod wav;
