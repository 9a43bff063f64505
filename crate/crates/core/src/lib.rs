//! Scenario generation for service ecosystems.
//!
//! The crate ingests yearly API/mashup data, builds weighted co-occurrence
//! networks, extracts relationship backbones (four baseline methods plus an
//! agent pipeline) and scores the resulting scenarios with an 8-dimensional
//! scenario vector, value entropy and a deviation functional.
//!
//! Module map:
//! - [`ingest`]: dataset loading, category classification, demand series, networks
//! - [`graph`]: weighted undirected graph and structural metrics
//! - [`backbone`]: GT, HSS, PLA and cluster-filter sparsification
//! - [`metrics`]: environment indices, value entropy, deviation, scenario vectors
//! - [`scenario`]: scenario sets, sampling, reduction, expected scenario
//! - [`llm`]: pluggable text-model adapter with a deterministic stub
//! - [`env_agent`], [`social_agent`], [`planner_agent`]: the three agents
//! - [`pipeline`]: per-method scenario evaluation wiring the agents together
//! - [`bench`]: timing records and efficiency summaries
//! - [`synth`]: seeded synthetic ecosystem datasets

// `!(x > 0.0)` is used on purpose so NaN falls into the rejecting branch
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod backbone;
pub mod bench;
pub mod env_agent;
pub mod error;
pub mod graph;
pub mod ingest;
pub mod llm;
pub mod metrics;
pub mod pipeline;
pub mod planner_agent;
pub mod rng;
pub mod scenario;
pub mod social_agent;
pub mod synth;

pub use error::{Error, Result};
pub use graph::CooccurrenceNetwork;
pub use ingest::Category;
