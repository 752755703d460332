//! Enclosure-method numerics for a cavity hidden inside a 3D heat conductor.
//!
//! The pipeline runs from surface geometry and broken-path optics, through a
//! modified-Helmholtz boundary integral solver and time-domain forward solvers,
//! to the indicator function, its exponential slope, and outer enclosures of
//! the cavity.

// Negated comparisons are deliberate: they reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bem;
pub mod checks;
pub mod enclosure;
pub mod error;
pub mod geometry;
pub mod heat_forward;
pub mod indicator;
pub mod laplace_oracle;
pub mod path_optics;
pub mod quad;
pub mod scenario;

pub use error::{Error, Result};
pub use geometry::{FocusedMeshSpec, MeshNode, QuadratureMesh, Surface, SurfaceKind, SurfaceSpec, Vec3};

pub use path_optics::{CriticalPoint, MinimizerSet, PointClass};
