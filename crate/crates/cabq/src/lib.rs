//! File formats, oracle adapters, the on-disk cache, the batch pipeline and
//! the `cabq` command line, on top of `cabq-core`.

pub mod cache;
pub mod cli;
pub mod io;
pub mod oracles;
pub mod pipeline;

pub use cabq_core as core;
