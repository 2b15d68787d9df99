//! Parallel and efficient coordinate descent for feature-based matrix
//! factorization.
//!
//! The model scores a query-target pair as `(P X_i) . (Q Z_j)`: sparse
//! feature vectors from two domains are mapped into a shared latent space
//! and matched there. Training minimizes an elastic-net-regularized loss
//! over the observed pairs.
//!
//! Four trainers share the same model:
//!
//! * [`cd::naive_cd_epoch`] — textbook coordinate descent, exact buffered
//!   predictions per coordinate; the reference the others are checked
//!   against.
//! * [`cd::efficient_cd_epoch`] — caches per-instance gradient/curvature
//!   statistics so an epoch costs `O(d (nnz(X) + nnz(Z) + |obs|))`.
//! * [`parallel::pl2m_epoch`] — updates random feature blocks
//!   simultaneously under a relaxed curvature bound; the objective still
//!   decreases after every row, for any block size and worker count.
//! * [`hogwild::hogwild_epoch`] — lock-free parallel SGD baseline.

pub mod cd;
pub mod cli;
pub mod error;
pub mod hogwild;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod sparse;
pub mod synth;

pub use error::{Error, Result};
