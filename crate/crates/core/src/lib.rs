//! Method-level innovation engine: methods as nodes in a weighted
//! provenance tree, a clustering abstraction tree over the same nodes,
//! funnel retrieval, operator-driven synthesis, scoring, verification and
//! append-only write-back.

pub mod abstraction;
pub mod audit;
pub mod bench;
pub mod cli;
pub mod config;
pub mod dedup;
pub mod embed;
pub mod error;
pub mod funnel;
pub mod http;
pub mod index;
pub mod ingest;
pub mod kmeans;
pub mod model;
pub mod persist;
pub mod provenance;
pub mod quality;
pub mod repo;
pub mod synthesis;
