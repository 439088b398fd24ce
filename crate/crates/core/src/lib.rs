//! Unsupervised domain discovery over encoder sentence representations.
//!
//! The pieces, bottom-up:
//!
//! - [`embstore`]: fixed-stride binary embedding files with a JSON sidecar.
//! - [`pooling`]: sentence-to-document mean pooling and label broadcasting.
//! - [`kmeans`]: Lloyd's k-means, k-means++ seeding, best-of-N restarts.
//! - [`projection`]: cosine PCA for 2-D views of a layer.
//! - [`evaluation`]: contingency tables, purity, confusion tables, layer sweeps.
//! - [`corpusprep`]: cleaning, dedup, document-consistent splits, per-cluster partitions.
//! - [`router`]: nearest-centroid selection of a cluster-specific model.
//! - [`pipeline`] and [`cli`]: the `domclust` command line.

pub mod cli;
pub mod corpusprep;
pub mod embstore;
pub mod error;
pub mod evaluation;
pub mod kmeans;
pub mod pipeline;
pub mod pooling;
pub mod projection;
pub mod router;

pub use embstore::{EmbeddingMeta, EmbeddingRecord, EmbeddingSet, Level};
pub use error::{Error, Result};
pub use kmeans::{ClusterAssignment, KMeansConfig, KMeansModel};
