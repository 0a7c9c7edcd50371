//! Command-line pipeline and HTTP service around [`pcr_core`].

pub mod cli;
pub mod commands;
pub mod server;
