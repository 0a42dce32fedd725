//! Model soups for small encoders: parameter containers, convex mixing,
//! simplex grids and sampling, a toy tanh encoder with self-supervised and
//! supervised training, kNN evaluation, and soup search (uniform, greedy,
//! few-shot seasoning, entropy-based Self-Seasoning).
//!
//! The crate is `no_std` and needs only `alloc`. File formats, the CLI and
//! the experiment runner live in the `soupkit` crate.

#![no_std]
// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Numeric kernels index several arrays with one loop variable.
#![allow(clippy::needless_range_loop)]

extern crate alloc;

pub mod data;
pub mod error;
pub mod eval;
pub mod linalg;
pub mod mixer;
pub mod model;
pub mod rng;
pub mod soup;
pub mod ssl;
pub mod tensor;
pub mod toys;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{EmbeddingMatrix, Matrix};
pub use mixer::{MixtureWeights, SimplexGridSpec};
pub use tensor::{assert_compatible, CheckpointMeta, Role, Tensor, TensorSet};
