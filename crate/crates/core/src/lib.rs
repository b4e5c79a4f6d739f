//! Joint graph condensation and structure denoising.
//!
//! A noisy training graph is condensed into a small synthetic graph while its
//! structure is cleaned with reliability scores measured against that
//! condensed graph. The same condensed graph later denoises unseen test
//! graphs without any retraining.

pub mod baselines;
pub mod condense;
pub mod dense;
pub mod denoise;
pub mod error;
pub mod graph;
pub mod harness;
pub mod io;
pub mod noise;
pub mod relay;

pub use condense::{condense, CondenseConfig, CondenseMethod, CondensedGraph, Condenser};
pub use dense::Matrix;
pub use denoise::{
    alternating_optimize, grid_search_thresholds, test_time_denoise, warmup_denoise, DenoiseConfig,
    DenoiseOutcome, Thresholds,
};
pub use error::{Error, Result};
pub use graph::{build_graph, edge_homophily, normalize, propagate, Graph, Masks, NormalizedAdjacency};
pub use noise::{changed_edge_ratio, inject_random_noise, NoiseSpec};
