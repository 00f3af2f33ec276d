//! Core library: click simulation on ranked lists, click-model training,
//! and evaluation with perplexity, nDCG, and CMIP (a conditional-mutual-
//! information measure of how biased a model is by its logging policy).
//!
//! The crate is organized around the benchmark pipeline:
//!
//! corpus -> policy -> usersim -> clickmodels -> metrics -> bench
//!
//! Every random choice flows from a single `u64` seed through named
//! [`rng`] streams, so any run is reproducible bit-for-bit, including
//! under parallel execution.

pub mod bench;
pub mod clickmodels;
pub mod corpus;
pub mod policy;
pub mod usersim;
pub mod error;
pub mod metrics;
pub mod rng;

pub use bench::{BenchRow, PolicySpec, RunConfig, Strategy};
pub use clickmodels::{ModelKind, ModelSpec, RelevanceScores, TrainedModel};
pub use corpus::{Corpus, Document, Query};
pub use policy::{ExpectedRanks, PolicyScores, Ranking};
pub use usersim::{ClickLog, ClickRecord, UserKind, UserModelConfig};
pub use error::{Error, Result};
pub use metrics::{CmipConfig, CmipEstimate, PerplexityReport, TripletSet};
