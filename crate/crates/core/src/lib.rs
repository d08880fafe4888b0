//! Bounded solutions of nonautonomous difference equations
//! `x_{n+1} = A_n x_n + h_n` whose homogeneous part admits exponential
//! dichotomies on both semi-axes.
//!
//! The crate works on finite-dimensional truncations: states live in `R^d`,
//! the integer axis is replaced by a [`dynamics::Window`] with geometric tails,
//! and the (generalized) inverses are Moore-Penrose pseudo-inverses with an
//! explicit rank tolerance.
//!
//! * [`linalg`] pseudo-inverses, projectors, weighted (strong) pseudo-inverses
//! * [`dynamics`] coefficient families, evolution operators, dichotomy checks
//! * [`green`] the reduction `D = P - (I - Q)`, solvability residual, Green operator
//! * [`bvp`] boundary operators and the reduced equation `V c = alpha - l(G[h])`
//! * [`nonlinear`] generating equation, `B0`, and the continuation iteration
//! * [`problems`] built-in problems with closed-form oracles

pub mod bvp;
pub mod dynamics;
pub mod error;
pub mod green;
pub mod linalg;
pub mod nonlinear;
pub mod par;
pub mod problems;
pub mod sequence;

pub use error::{Error, Result};
pub use linalg::{LinearMap, StateVector};
pub use par::Execution;
pub use sequence::Sequence;
