//! Laplacian-LoRA: a low-rank spectral correction to GCN propagation,
//! trained from scratch on CPU, with oversmoothing diagnostics.
//!
//! Module map:
//!
//! * [`sparse`], [`dense`], [`graph`]: matrices, the graph container and the
//!   normalized Laplacian `L` / propagation operator `S = I − L`.
//! * [`eigen`]: the `k` smallest eigenpairs of `L` and their cache file.
//! * [`filters`]: spectral responses and the stability check.
//! * [`autodiff`]: tape-based reverse mode and Adam.
//! * [`model`], [`checkpoint`]: the network, training, the seed protocol.
//! * [`diagnostics`]: variance, spectrum, contraction and energy curves.
//! * [`datasets`]: container I/O, synthetic graphs, the graph hash.

pub mod autodiff;
pub mod checkpoint;
pub mod datasets;
pub mod dense;
pub mod diagnostics;
pub mod eigen;
pub mod error;
pub mod filters;
pub mod graph;
pub mod model;
pub mod sparse;

pub use dense::Matrix;
pub use eigen::EigenBasis;
pub use error::{Error, Result};
pub use graph::GraphDataset;
pub use model::{GcnModel, ModelConfig, TrainConfig, Variant};
pub use sparse::SparseMatrix;
