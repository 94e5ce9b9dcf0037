//! Turns Python repositories into self-contained evaluation scripts with
//! equivalence tests, and scores or harvests model solutions against them.

pub mod code_graph;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval_harness;
pub mod exec_env;
pub mod ingest;
pub mod llm;
pub mod pipeline;
pub mod python;
pub mod quality_gate;
pub mod sample_factory;
pub mod sandboxer;
pub mod scalar;
pub mod script;
pub mod test_builder;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Exact rational used where scores must compare without rounding.
pub type Exact = num_rational::Ratio<i128>;

pub type CorpusStats = dataset::CorpusStats<f64>;
pub type ExactCorpusStats = dataset::CorpusStats<Exact>;
pub type PassAtKReport = eval_harness::PassAtKReport<f64>;
pub type ExactPassAtKReport = eval_harness::PassAtKReport<Exact>;
