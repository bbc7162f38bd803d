//! Degree-preserving summation-by-parts finite-difference operators, interface
//! projections for non-conforming element faces, and a 2D linear advection
//! solver coupling such elements with simultaneous approximation terms.
//!
//! The pipeline runs bottom-up: [`sbp1d`] builds and certifies 1D operators,
//! [`glue`] builds projections between face grids, [`tensor2d`] forms
//! tensor-product element operators, [`mesh`] lays them out on the periodic
//! unit square, [`advect`] evaluates and integrates the semi-discretization,
//! [`analysis`] measures it and [`experiment`] drives complete studies.

pub mod advect;
pub mod analysis;
pub mod error;
pub mod experiment;
pub mod glue;
pub mod linalg;
pub mod mesh;
pub mod optim;
pub mod sbp1d;
pub mod sparse;
pub mod tensor2d;

pub use error::{Result, SbpError};
pub use glue::{GluePolicy, IntermediateGrid, ProjectionPair};
pub use mesh::{Mesh, MeshPattern, MeshSpec, OperatorRegistry, ProjectionDegree};
pub use sbp1d::{construct_classical, construct_degree_preserving, OperatorKind, SbpOperator1D};
pub use sparse::CsrMatrix;
pub use tensor2d::{Face, Operator2D};
