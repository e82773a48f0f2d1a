//! File formats, configuration, reports and command implementations for the
//! `nshrink` command-line tool.

pub mod commands;
pub mod config;
pub mod io;
pub mod model;
pub mod report;
