//! Riemannian flow matching policies (RFMP) and their stable variant (SRFMP).
//!
//! The crate is organised bottom-up:
//!
//! - [`manifolds`]: exponential/logarithmic maps, distances and projections for
//!   Euclidean space, hyperspheres, SPD matrices and products of these.
//! - [`distributions`]: source distributions on manifolds and the tiled
//!   action-chunk prior.
//! - [`flows`]: conditional probability paths and target vector fields, the
//!   Lyapunov function of the stable flow and its LaSalle check.
//! - [`nnet`]: the conditioned MLP vector-field regressor with hand-written
//!   reverse-mode gradients and a binary checkpoint format.
//! - [`training`]: datasets, losses, AdamW, EMA and the training loop.
//! - [`inference`]: projected Euler integration, the stable step schedule and
//!   the receding-horizon policy.
//! - [`tasks`]: synthetic datasets and the planar/spherical reach environment.
//! - [`properties`]: a self-contained invariant suite runnable from the CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)] // `!(x > 0.0)` deliberately rejects NaN

pub mod distributions;
pub mod error;
pub mod flows;
pub mod inference;
pub mod manifolds;
pub mod nnet;
pub mod properties;
pub mod tasks;
pub mod training;

pub use error::{Error, Result};
pub use manifolds::{Factor, ManifoldSpec, Point, Tangent};
