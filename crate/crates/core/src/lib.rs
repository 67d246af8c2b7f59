//! Constraint-preserving geometric integration on observation-induced fiber bundles.
//!
//! Phase vectors are ordered `(x¹..x^{2n}, ξ₁..ξ_k, π₁..π_k)`. Brackets follow
//! `{F, G} = dFᵀ B dG` with `{q, p} = +1`, and constraints are feasible when `Φ ≥ 0`.

pub mod constraints;
pub mod error;
pub mod geometry;
pub mod integrator;
pub mod lax;
pub mod numdiff;
pub mod poisson;
pub mod system;
pub mod systems;

pub use error::{BundleError, Result};
pub use system::{BoundaryLayer, BundleState, Coords, Layout, Matrix, ObservationSystemSpec, PhaseFunction, Vector};
