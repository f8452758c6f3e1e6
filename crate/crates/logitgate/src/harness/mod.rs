//! The experiment harness: dataset ingestion, output splitting,
//! classification, and the resumable run matrix.

pub mod classifier;
pub mod dataset;
pub mod ingest;
pub mod runner;
pub mod split;
