//! Evolving-surface finite elements for a tangential Navier-Stokes-Cahn-Hilliard
//! system with a prescribed normal velocity.
//!
//! The crate provides analytic evolving surfaces, triangulated meshes advected
//! along the normal flow, P1/P2 finite element spaces with nodally tangential
//! vector fields, assembly of the mass/stiffness/strain/transport forms, the
//! auxiliary elliptic operators (tangential correction field, inverse
//! Laplacian, inverse Stokes operator, inf-sup constant), the coupled
//! time stepper, and the diagnostic functionals monitored by the scheme.

pub mod diagnostics;
pub mod elliptic;
pub mod exec;
pub mod fields;
pub mod forms;
pub mod geometry;
pub mod mesh;
pub mod piola;
pub mod potentials;
pub mod quadrature;
pub mod solver;
pub mod space;
pub mod sparse;

pub use geometry::{EvolvingSurface, GeomSample, GeometryError, SurfaceData};
pub use mesh::{MeshError, SurfaceMesh};
pub use potentials::{PotentialSpec, ViscositySpec};
pub use solver::{SchemeConfig, SolverError, SolverState};
pub use space::{Family, FeFunction, FeSpace};
