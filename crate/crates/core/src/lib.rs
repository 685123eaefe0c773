//! Query-driven multi-term inverted index over a simulated key-value back
//! end, with gateway caching, workload tooling and offline analysis.

pub mod analysis;
pub mod cache;
pub mod index;
pub mod kv;
pub mod model;
pub mod popularity;
pub mod query;
pub mod simnet;
pub mod workload;

pub use model::{
    CacheScheme, ConfigError, IndexMode, PostingList, Query, Resource, ResourceId, ResourceSet,
    SystemConfig, TagKey, Timestamp,
};
pub use simnet::{Cluster, MetricsLedger};
