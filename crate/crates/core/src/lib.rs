//! Spherical gas bubbles in an incompressible fluid.
//!
//! The crate builds the exterior harmonic velocity basis spanned by the
//! gradients of Neumann harmonics around N spheres, integrates the inviscid
//! Lagrangian dynamics of the bubble radii and centers, runs a viscous
//! prescribed-dynamics Galerkin time-stepping scheme, and provides the
//! arbitrary Lagrangian-Eulerian flow machinery used to transport
//! divergence-free fields between moving domains.
//!
//! All quantities are nondimensional with unit fluid density.

pub mod ale;
pub mod calibration;
pub mod corpus;
pub mod driver;
pub mod energy;
pub mod error;
pub mod geometry;
pub mod harmonic;
pub mod inviscid;
pub mod io;
pub mod ode;
pub mod quadrature;
pub mod rayleigh_plesset;
pub mod solid;
pub mod trajectory;
pub mod viscous;

pub use error::{ConfigViolation, Error, Result};
pub use geometry::{AdmissibilityReport, Ball, BubbleConfig};
pub use nalgebra::{Matrix3, Vector3};
