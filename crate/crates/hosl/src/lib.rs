//! Runtime for hybrid-order split learning: threaded and TCP transports,
//! synthetic datasets, training runs, campaigns, CSV output, the memory
//! report and the `hosl` command line.
//!
//! The algorithms themselves live in [`hosl_core`].

pub mod campaign;
pub mod cli;
pub mod dataset;
pub mod memreport;
pub mod output;
pub mod problem;
pub mod train;
pub mod transport;

pub use hosl_core as core;
