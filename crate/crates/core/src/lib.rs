//! Cluster exploration of labeled binary corpora.
//!
//! The pipeline turns each sample into a normalized byte n-gram frequency
//! vector, clusters the vectors with Lloyd's K-means, and scores the result
//! against family labels with the adjusted Rand index. On top of that sit
//! the pairwise family experiments, elbow analysis, and the SVG/DOT figure
//! writers.
//!
//! ```no_run
//! use malclust::corpus::Manifest;
//! use malclust::experiments::{run_pairwise, PairwiseConfig};
//!
//! let manifest = Manifest::load("corpus/manifest.tsv").unwrap();
//! let outcome = run_pairwise(&manifest, &PairwiseConfig::default()).unwrap();
//! println!("{} pairs", outcome.runs.len());
//! ```

pub mod corpus;
pub mod experiments;
pub mod features;
pub mod kmeans;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod render;
pub mod seed;
pub mod synth;

pub use corpus::{FamilyLabel, MalwareType, Manifest, Sample, Selector};
pub use features::{FeatureVector, NGramConfig, VocabScope, Vocabulary};
pub use kmeans::{ClusteringResult, KMeansConfig, PointSet};
pub use metrics::{ContingencyTable, MetricReport, PairCounts};

/// Version string recorded in every output metadata header.
pub const TOOL_VERSION: &str = concat!("malclust ", env!("CARGO_PKG_VERSION"));
