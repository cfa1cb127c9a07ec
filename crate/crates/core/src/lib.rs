//! Data-driven stochastic reachability for black-box Markov control processes.
//!
//! The stochastic kernel `Q(·|x, u)` of a system is never modeled directly.
//! Instead, a finite sample of transitions `(xᵢ, uᵢ, yᵢ)` is embedded in a
//! reproducing kernel Hilbert space, and the integrals of the safety
//! dynamic program become inner products `Vᵀβ(x, u)` computed from Gram
//! matrix solves. Every computed safety probability can carry a
//! state/input-dependent finite-sample radius `B(x, u)`.
//!
//! Module map:
//!
//! | module | contents |
//! |--------|----------|
//! | [`kernel`] | kernels, Gram matrices, the regularized Cholesky solve |
//! | [`embedding`] | sample sets, the fitted conditional embedding, `β(x,u)` |
//! | [`reach`] | sets, policies, terminal- and first-hitting recursions |
//! | [`bounds`] | eigenvalue floors, bounded-difference constant, `B(x,u)` |
//! | [`systems`] | benchmark dynamics, controllers, seeded sampling |
//! | [`dp`] | grid dynamic programming and Monte-Carlo ground truth |
//! | [`experiment`] | config files, the experiment runner, CSV/PGM artifacts |

// `!(x > 0.0)` style checks reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod dp;
pub mod embedding;
pub mod error;
pub mod experiment;
pub mod kernel;
pub mod points;
pub mod reach;
pub mod systems;

pub use error::{Error, Result};
pub use points::PointSet;
