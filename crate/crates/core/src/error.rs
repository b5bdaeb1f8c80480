use thiserror::Error;

use crate::geometry::Point2;

/// Errors raised anywhere in the discretization and solve pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("point ({}, {}) is not on the boundary (signed distance {distance:e})", .point.x, .point.y)]
    NotOnBoundary { point: Point2, distance: f64 },

    #[error("boundary sample needs at least 3 points, got {0}")]
    TooFewSamples(usize),

    #[error("invalid mesh parameters: {0}")]
    InvalidMeshParams(String),

    #[error("domain too small for h = {h}: only {interior} interior nodes (need at least 9)")]
    DomainTooSmall { h: f64, interior: usize },

    #[error("node {node}: quadrant {quadrant} of direction {direction} has no mesh node within r")]
    EmptyQuadrant {
        node: usize,
        direction: usize,
        quadrant: usize,
    },

    #[error("degenerate stencil denominator {denominator:e} (scale {scale:e})")]
    DegenerateDenominator { denominator: f64, scale: f64 },

    #[error("stencil weights are not monotone: {0:?}")]
    NonMonotoneStencil(Vec<f64>),

    #[error("boundary directional stencil geometry violates the convex hull condition")]
    ConvexHullViolation,

    #[error("boundary node {node}: no valid triangle for direction {direction}")]
    NoValidTriangle { node: usize, direction: usize },

    #[error("node {0} has no neighbors in its search ball")]
    NoNeighbors(usize),

    #[error("grid function has length {got}, mesh has {expected} nodes")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value in grid function at node {0}")]
    NonFinite(usize),

    #[error("newton solver did not converge in {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },

    #[error("linear solve failed: {0}")]
    LinearSolveFailure(String),

    #[error("line search stagnated at iteration {iteration} (residual {residual:e})")]
    StagnatedLineSearch { iteration: usize, residual: f64 },

    #[error("jacobian rows are degenerate at nodes {0:?}")]
    DegenerateRows(Vec<usize>),

    #[error("exact affine map is not symmetric (asymmetry {0:e})")]
    AsymmetricMap(f64),

    #[error("singular linear system")]
    SingularSystem,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("solution invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
