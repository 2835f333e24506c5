//! Cross-inlining binary function similarity detection.
//!
//! Given a query function from a build without inlining and a target
//! function from a build with inlining, decide whether the query was inlined
//! into the target. The pipeline:
//!
//! - [`acfg`]: attributed control-flow graphs and bag-of-opcodes features
//! - [`labeling`]: debug-table mappings, bridge functions and inlining patterns
//! - [`pairgen`]: labeled pair sampling and project splits
//! - [`gnn`]: the graph embedding model and its training
//! - [`detector`]: per-pattern models ensembled by maximum similarity
//! - [`eval`]: metrics, AUC and threshold sweeps
//! - [`synth`]: a synthetic corpus generator with known ground truth
//! - [`dataset`]: corpus directories and end-to-end training helpers

pub mod acfg;
pub mod dataset;
pub mod detector;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod labeling;
pub mod pairgen;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/graphs.md")]
    mod graphs {}
    #[doc = include_str!("../../../book/src/labeling.md")]
    mod labeling {}
    #[doc = include_str!("../../../book/src/pairs.md")]
    mod pairs {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
