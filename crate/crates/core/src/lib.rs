//! Analysis base: a catalog that indexes scientific datasets, pipelines and
//! algorithms by reference, records the provenance of every pipeline execution on a
//! simulated grid, and answers cohort and provenance queries.

pub mod crawler;
pub mod error;
pub mod harness;
pub mod ident;
pub mod lfn;
pub mod model;
pub mod persistency;
pub mod provenance;
pub mod query;
pub mod store;
pub mod synth;

pub use error::{Error, ErrorClass, Result};
pub use ident::{Clock, Id, IdSource, ManualClock, SystemClock, Timestamp};
pub use lfn::{Lfn, StorageUrls};
pub use persistency::{AnalysisBase, NewAnalysis};
