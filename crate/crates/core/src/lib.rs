//! Hash-based model compression with operation-specific tiled memory access.
//!
//! All model weights live in one flat compressed array. Each logical tensor
//! (an embedding table, a weight matrix, a bias) is a *view* into that array:
//! chunks or 2D tiles of the tensor are placed by a universal hash, scaled by
//! a per-module factor, and optionally sign-flipped by an independent ±1 hash.
//! Because placement is chunked/tiled rather than per-element, reads coalesce
//! and the kernels stay cache-friendly.
//!
//! The crate provides:
//! - [`hashing`]: the universal hash families (placement and sign);
//! - [`store`]: the shared array, gradient buffer, and module registration
//!   with global or local memory sharing;
//! - [`lookup`]: chunked row recovery and its scatter-accumulate backward;
//! - [`matmul`]: tiled matrix multiplication through the hash, the
//!   per-element scattered baseline, and weight materialization for oracles;
//! - [`estimator`]: the inner-product estimators for global/local sharing,
//!   their exact variance formulas, and Monte Carlo verification;
//! - [`trainer`]: desk-scale training of compressed models on synthetic data;
//! - [`benchmark`]: a median-of-runs timing harness for the kernels.

pub mod benchmark;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod exec;
pub mod hashing;
pub mod lookup;
pub mod matmul;
pub mod optim;
pub mod reference;
pub mod report;
pub mod store;
pub mod trainer;

pub use error::{Error, Result};
pub use hashing::{HashFamily, HashKind, Independence};
pub use store::{BindingKind, CompressedStore, ModuleBinding, ModuleSpec, SharingMode, TileConfig};
