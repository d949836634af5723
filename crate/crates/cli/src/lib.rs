//! Command implementations behind the `ivbart` binary.

pub mod config;
pub mod data;
pub mod fit;
pub mod report;
pub mod simulate;
pub mod summarize;
pub mod svg;
