//! NURBS-enhanced finite elements on hexahedral meshes.
//!
//! A domain whose curved boundary face is a single NURBS patch is meshed by
//! hexahedra. Elements touching the patch use a blended geometric map and a
//! hybrid basis built from the Greville-interpolatory patch basis; the rest of
//! the mesh is standard trilinear (Q1) finite elements.

pub mod error;
pub mod interpolation;
pub mod mesh;
pub mod patch;
pub mod presets;
pub mod quadrature;
pub mod solver;
pub mod space;
pub mod sparse;
pub mod spline;

pub use error::{Error, Result};

/// Points and vectors in physical space.
pub type Vec3 = nalgebra::Vector3<f64>;
