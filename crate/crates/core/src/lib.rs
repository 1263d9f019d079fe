//! Shape and topology optimization of boundary-condition regions on 2D
//! domains, with a screen boundary-element solver for the 3D coefficients.

pub mod bem;
pub mod derivatives;
pub mod error;
pub mod fem;
pub mod io;
pub mod mesh2d;
pub mod optimizer;
pub mod quadrature;
pub mod region;
pub mod smoothing;
pub mod validation;

pub use error::{Error, Result};
pub use mesh2d::{BoundaryLoop, DiskSurfaceMesh, EdgeId, Mesh2D, Point, Shape};
