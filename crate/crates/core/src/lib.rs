//! Generalized sliced-Wasserstein embeddings (GSWE) for set-structured data.
//!
//! A point set is pushed through `L` parametric slicers; on every slice its
//! empirical distribution is transported onto each of `K` learnable
//! reference sets, and the transport displacements are concatenated into a
//! fixed-length vector. Euclidean distance between two such vectors equals
//! the generalized sliced-Wasserstein distance between the sets when both
//! have the reference cardinality.
//!
//! Modules, bottom-up:
//!
//! - [`diffgraph`]: reverse-mode differentiation tape.
//! - [`transport1d`]: quantiles, monotone maps, 1-d Wasserstein distances.
//! - [`slicers`]: linear, polynomial and shared-trunk MLP slicers.
//! - [`gswdist`]: Monte-Carlo GSW and max-GSW.
//! - [`pool`]: the embedding itself and reference banks.
//! - [`ssl`]: SimCLR / SimSiam training of slicers and references.
//! - [`data_io`]: Set-Circles generation and file formats.
//! - [`eval`]: 1-NN retrieval and k-fold classification.

pub mod data_io;
pub mod diffgraph;
mod error;
pub mod eval;
pub mod gswdist;
pub mod nn;
pub mod pool;
pub mod slicers;
pub mod ssl;
pub mod transport1d;

pub use data_io::{PointSet, SetDataset, Split};
pub use diffgraph::{Tape, Tensor, Var};
pub use error::{Error, ErrorKind, Result};
pub use gswdist::{gsw, max_gsw, GswConfig};
pub use pool::{
    embed, pairwise_embed_distance, BankInit, BankInitKind, Model, ModelConfig, ReferenceBank,
    SetEmbedding,
};
pub use slicers::{Slicer, SlicerKind};
pub use transport1d::{wasserstein_1d, Interpolation, Samples1D};
