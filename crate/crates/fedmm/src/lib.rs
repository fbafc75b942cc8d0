//! Federated multimodal learning simulator with retrieval-based
//! augmentation for clients that miss a modality.
//!
//! The crate is organized bottom-up:
//!
//! - [`nn`]: flat-vector dense networks (two encoders, fusion, multi-label
//!   head) with exact gradients and Adam;
//! - [`rng`]: keyed deterministic random streams so results never depend on
//!   client execution order;
//! - [`data`]: synthetic label-conditioned multimodal corpora, partitioning,
//!   and JSONL persistence;
//! - [`retrieval`]: nearest-neighbor search over a public pool plus label
//!   refinement, used to fill in missing modalities;
//! - [`metrics`]: rank-based ROC AUC and weight-attribution diagnostics;
//! - [`federation`]: client/server round loop, aggregation-weight
//!   re-adjustment, and the experiment runner;
//! - [`config`]/[`output`]: run configuration and result files.

pub mod config;
pub mod data;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod nn;
pub mod output;
pub mod retrieval;
pub mod rng;

pub use error::{Error, Result};
