//! County-level mortality risk analytics.
//!
//! The pipeline runs from four source tables keyed by FIPS code to
//! standardized mortality ratios, boosted-tree regression with exact TreeSHAP
//! attributions, k-means risk clusters, the four-quadrant silent-risk
//! classification, and global/local Moran's I over a contiguity graph.

// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod cluster;
pub mod data;
pub mod error;
pub mod eval;
pub mod linear;
pub mod pipeline;
pub mod profile;
pub mod rng;
pub mod shap;
pub mod spatial;
pub mod stats;
pub mod synth;
pub mod trees;

pub use data::{CountyRecord, FeatureMatrix, Fips, ReferenceRate};
pub use error::{Error, Result};
pub use pipeline::{RunConfig, RunManifest};
pub use synth::Scenario;
pub use trees::{fit_gbt, fit_random_forest, ForestConfig, ForestModel, GbtModel, RegressionTree, Regressor, TrainConfig};
