//! Library side of the `extra-tilt` command-line tool.
//!
//! | command    | writes                                                    |
//! |------------|-----------------------------------------------------------|
//! | `simulate` | source.csv, target.csv, stream.csv, truth.json            |
//! | `sample`   | source.csv, target.csv, labeled_target.csv, classifier.json, truth.json |
//! | `fit`      | params.json, weights.csv, trace.csv (+ classifier.json)   |
//! | `evaluate` | report.json, hist.csv                                     |
//!
//! Exit codes: 0 success, 1 I/O failure, 2 validation or schema error,
//! 3 numeric divergence.

pub mod commands;
pub mod config;

use extra_tilt::Error;

pub use config::{RunConfig, SCHEMA_VERSION};

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => 1,
        Error::Divergence { .. } | Error::NumericRange { .. } => 3,
        _ => 2,
    }
}
