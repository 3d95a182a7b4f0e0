//! Benchmark engine for ICU outcome and length-of-stay prediction on longitudinal EHR data.
//!
//! The crate is organised along the benchmark's flow:
//!
//! * [`ingest`] reads raw CSV event tables (or synthesizes one) into a long-form table.
//! * [`preprocess`] cleans, merges to day level, derives labels and builds a [`Cohort`].
//! * [`split`] produces stratified k-fold and holdout partitions at patient level.
//! * [`predictors`] trains reference models with early stopping and grid search.
//! * [`metrics`] scores per-timestep prediction traces, including the outcome-specific MAE
//!   and the early prediction score.
//! * [`harness`] wires it all together from a single run config.

pub mod error;
pub mod harness;
pub mod ingest;
pub mod metrics;
pub mod numeric;
pub mod predictors;
pub mod preprocess;
pub mod rng;
pub mod split;

pub use error::{Error, Result, Stage};
pub use ingest::{ColumnMapping, RawEvent, RawEventTable, SyntheticSpec};
pub use preprocess::{Cohort, PatientSeries};
