//! Diffusion-guided self-supervised pretraining for graphs and hypergraphs.
//!
//! The linear-algebra layer ([`sparse`], [`dense`], [`graph`], [`diffusion`],
//! [`augment`], [`readout`]) is generic over [`Scalar`]; the training stack
//! ([`autograd`], [`encoder`], [`gcl`], [`gmae`], [`eval`]) runs in `f64`.

pub mod augment;
pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod dense;
pub mod diffusion;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gcl;
pub mod gmae;
pub mod graph;
pub mod params;
pub mod readout;
pub mod rng;
pub mod scalar;
pub mod sparse;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type SparseMatrix = sparse::CsrMatrix<f64>;
pub type SparseMatrix32 = sparse::CsrMatrix<f32>;
pub type DenseMatrix = dense::Matrix<f64>;
pub type DenseMatrix32 = dense::Matrix<f32>;
pub type Graph = graph::Graph<f64>;
pub type Graph32 = graph::Graph<f32>;
pub type Hypergraph = graph::Hypergraph<f64>;
pub type Hypergraph32 = graph::Hypergraph<f32>;
pub type Structure = graph::Structure<f64>;
pub type Structure32 = graph::Structure<f32>;
pub type DiffusionKernel = diffusion::DiffusionKernel<f64>;
pub type DiffusionKernel32 = diffusion::DiffusionKernel<f32>;
pub type EnhancedAdjacency = diffusion::EnhancedAdjacency<f64>;
pub type AugmentedView = augment::AugmentedView<f64>;
