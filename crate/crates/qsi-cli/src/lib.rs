//! Command implementations behind the `qsi` binary, exposed as a library so
//! integration tests can drive the same code paths in-process.

pub mod commands;
pub mod config;
