//! File formats, parallel search and the command-line driver for
//! [`mknn_core`].

pub mod cli;
pub mod config;
pub mod emb;
mod error;
pub mod hashing;
pub mod jsonl;
pub mod report;
pub mod search;

pub use error::{Error, Result};
pub use mknn_core as core;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
