//! Minimal Lagrangian graphs via an additive eigenvalue problem.

pub mod error;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod mesh;
pub mod operators;
pub mod solver;
pub mod stencils;

pub use error::{Error, Result};
pub use geometry::{ConvexBody, Mat2, Point2};
pub use mesh::{MeshKnobs, MeshParams, NodeId, NodeTag, QuadMesh};
pub use operators::{Branch, Discretization, GridFunction, OperatorConfig, Residual};
pub use solver::{solve_full, EigenSolution, KappaMode, NewtonConfig, Scheme};
pub use stencils::{DirectionSet, StencilCache};
