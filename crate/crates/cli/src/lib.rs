//! Configuration, run orchestration and output writers of the `bbgky` binary.

pub mod config;
pub mod output;
pub mod run;
pub mod sweep;
