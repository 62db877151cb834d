//! Command-line front end and streaming server for the motion synthesis
//! engine.

pub mod commands;
pub mod manifest;
pub mod protocol;
pub mod server;
