use thiserror::Error;

/// Why a ray failed to produce an intersection with a surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissReason {
    /// The traced segment never changed sides of the graph.
    NotReached,
    /// The ray crosses the extended graph, but outside the surface patch.
    OutsideDomain,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("vector is not future timelike (<v,v> = {norm})")]
    NotTimelike { norm: f64 },
    #[error("observer is not unit (<n,n> = {norm})")]
    NotUnit { norm: f64 },
    #[error("surface is not spacelike at {at:?} (smallest eigenvalue {eigenvalue})")]
    NotSpacelike { at: Vec<f64>, eigenvalue: f64 },
    #[error("no future null solution for the given spatial direction")]
    NoNullSolution,
    #[error("integrator step failure at lambda = {lambda}: {reason}")]
    StepFailure { lambda: f64, reason: String },
    #[error("ray does not intersect surface `{surface}` ({reason:?})")]
    NoIntersection { surface: String, reason: MissReason },
    #[error("ray crosses surface `{surface}` {count} times")]
    MultipleIntersection { surface: String, count: usize },
    #[error("finite-difference step too small: relative noise {noise:e}")]
    StepTooSmall { noise: f64 },
    #[error("tangent lies in the contact kernel: |alpha| = {alpha:e} below floor {floor:e}")]
    ContactKernel { alpha: f64, floor: f64 },
    #[error("consistency check `{check}` failed: {lhs} vs {rhs}")]
    Consistency { check: &'static str, lhs: f64, rhs: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
