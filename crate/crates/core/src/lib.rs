//! Null geodesics on coordinate Lorentzian spacetimes, the contact forms
//! induced on the space of light rays by spacelike graph surfaces, and the
//! redshift identities relating them.
//!
//! Modules build on each other bottom-up: [`geometry`] and [`surface`]
//! describe the spacetime and its hypersurfaces, [`geodesic`] traces rays,
//! [`variation`] builds Jacobi fields, [`contact`] evaluates contact forms,
//! [`redshift`] computes frequency ratios and [`liouville`] integrates over
//! ray bundles.

pub mod contact;
pub mod error;
pub mod expr;
pub mod geodesic;
pub mod geometry;
pub mod liouville;
pub mod ode;
pub mod redshift;
pub mod rng;
pub mod sum;
pub mod variation;
pub mod surface;

pub use error::{Error, MissReason, Result};
pub use geometry::{
    CausalClass, ChristoffelMode, Event, MetricFamily, SpacetimeMetric, SpacetimeVector,
};
pub use surface::{CauchySurface, Domain, Quadrature, Region, SurfacePoint, UnitCovector};
