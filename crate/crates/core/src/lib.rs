//! releq-core: find, classify, and independently verify relative equilibria
//! of G-invariant Lagrangian systems.
//!
//! The library is organized around three equivalent characterizations of a
//! relative equilibrium (critical points of the restricted energy, critical
//! points of the locked Lagrangian, stationary points of the Euler-Poincare
//! flow), together with the momentum-map and Routhian calculus needed to
//! evaluate them and a trajectory-level oracle that checks candidates
//! against the unreduced equations of motion.

pub mod diagnostics;
pub mod dynamics;
pub mod equilibria;
pub mod error;
pub mod expr;
pub mod fd;
pub mod liealg;
pub mod model;
pub mod systems;

pub use error::{Error, Result};
pub use expr::Expression;
pub use fd::FdScheme;
pub use liealg::{AlgebraVector, MatrixGroupRep, MomentumVector, StructureConstants};
pub use model::{load_system, load_system_from_path, load_system_from_str, SystemDocument};
pub use systems::{HessianBlocks, SystemModel, TrivializedState};
