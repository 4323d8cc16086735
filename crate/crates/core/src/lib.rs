//! Knowledge-graph embedding with relational prototype entities.
//!
//! Every relation `r` gets two virtual nodes, a head prototype `P_H(r)` and a
//! tail prototype `P_T(r)`, linked to all heads (resp. tails) of `r`. Two model
//! families use them:
//!
//! * [`rotate`]: RotatE link prediction, where each entity embedding is blended
//!   with its prototype before scoring (`λ·e + (1-λ)·P`).
//! * [`gcn`]: GCN entity alignment, where prototypes take part in neighborhood
//!   propagation.
//!
//! Setting `λ = 1` recovers the plain baselines exactly. [`eval`] holds the
//! ranking and clustering metrics, [`geometry`] the numerical checks for the
//! prototype-area bounds, and [`synth`] the synthetic fixtures used in tests.

pub mod embedding;
pub mod error;
pub mod eval;
pub mod gcn;
pub mod geometry;
pub mod gradcheck;
pub mod kg;
pub mod matrix;
pub mod optim;
pub mod rng;
pub mod rotate;
pub mod synth;

pub use error::{Error, Result};
