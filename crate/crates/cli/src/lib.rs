//! File formats, configuration and the `wavefis` command line on top of
//! [`wavefis_core`].

pub mod commands;
pub mod config;
pub mod dataset;
pub mod model_io;

pub use commands::run;
