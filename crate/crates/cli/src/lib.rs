//! Library surface of the command line driver, shared by the binary and the
//! integration tests: configuration parsing, file formats, and pipelines.

pub mod config;
pub mod files;
pub mod pipelines;
