//! Configuration, pipeline composition and reporting behind the
//! `voicemorph` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod app;
pub mod config;
pub mod pipeline;
pub mod report;

pub use app::{main_with_args, Cli, Command};
pub use config::{Resolved, RunConfig};
