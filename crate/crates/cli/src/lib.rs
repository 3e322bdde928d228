//! Configuration, orchestration and reporting for the `dcf` command.

pub mod config;
pub mod report;
pub mod run;
