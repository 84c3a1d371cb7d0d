//! Regression optimization for constrained-random verification.
//!
//! The crate ranks recorded regression runs by coverage contribution, learns
//! per-bin predictors from randomized control points, plans compressed
//! regressions with tightened constraints, and ships a synthetic testbench
//! that serves as a ground-truth oracle for all of the above.
//!
//! Data-parallel inner loops (ranking scans, per-bin training, archive
//! generation) run on rayon when the `parallel` feature is enabled and fall
//! back to plain iterators otherwise. Outputs are identical either way.

pub mod constraints;
pub mod coverage;
pub mod error;
pub mod generate;
pub mod ingest;
pub mod learn;
pub mod methodology;
pub mod metrics;
pub mod par;
pub mod ranking;
pub mod report;
pub mod rng;
pub mod synthdut;

pub use coverage::{
    ControlPointDecl, ControlValue, CoverageBin, CoverageSpace, Domain, Regression, RunRecord,
    RunStatus,
};
pub use error::{Error, Result};

/// Version written into every on-disk artifact.
pub const FORMAT_VERSION: u32 = 1;
