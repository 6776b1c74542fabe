//! Command-line front end: argument definitions, command implementations and
//! the JSON run report.

pub mod args;
pub mod commands;
pub mod report;
