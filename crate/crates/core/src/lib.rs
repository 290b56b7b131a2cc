//! Transport, fragmentation and coagulation of particles carrying a mass
//! attribute: discretisations, semigroups, the mild-solution solver and the
//! checks that go with them.

pub mod certificate;
pub mod coagulation;
pub mod error;
pub mod fragmentation;
pub mod grid;
pub mod io;
pub mod kernels;
pub mod quadrature;
pub mod solver;
pub mod transport;

pub use certificate::{Certificate, CertificateKind, Verdict};
pub use error::{Error, Result};
pub use grid::{
    classical_moment, classical_norm, distance, moment, weighted_norm, weighted_norm_mu, Boundary,
    MassGrid, NormMode, SpatialGrid, Spacing, StateField,
};
