//! Numerical laboratory for Gaussian beam quasimodes, geodesic intersection
//! geometry, resolvent bounds off a small bad frequency set, quantified
//! stationary phase and pointwise potential recovery on model manifolds.

pub mod beam;
pub mod error;
pub mod experiment;
pub mod expr;
pub mod fit;
pub mod geodesic;
pub mod intersection;
pub mod jacobi;
pub mod manifold;
pub mod ode;
pub mod quad;
pub mod recovery;
pub mod report;
pub mod spectral;
pub mod stationary;

pub use error::{Error, Result};
pub use manifold::{ChartedManifold, Point, Tangent};
