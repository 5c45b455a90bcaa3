//! Secret detection, false-positive filtering and remediation.
//!
//! The crate is organised as a pipeline:
//!
//! * [`scan`] walks a tree with heuristic detectors and produces a baseline.
//! * [`features`] turns findings and text rows into sparse vectors.
//! * [`text`] converts document pages into normalized rows.
//! * [`synth`] samples strings from regular expressions to augment the
//!   minority class.
//! * [`models`] trains logistic regression and gradient-boosted trees and
//!   tunes recall-first thresholds.
//! * [`eval`] splits data and computes confusion metrics.
//! * [`remediate`] rewrites confirmed secrets into vault lookups.
//! * [`ingest`] pulls pages from a document platform or fixture directory.

pub mod eval;
pub mod features;
pub mod ingest;
pub mod models;
pub mod remediate;
pub mod scan;
pub mod synth;
pub mod text;
