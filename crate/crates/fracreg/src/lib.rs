//! Weighted analytic regularity toolkit for the integral fractional Laplacian
//! on polytopes in three dimensions.
//!
//! The crate is organised bottom-up: geometry and neighborhood partitions,
//! quadrature and weighted norms, coverings of singular neighborhoods, the
//! degenerate-elliptic extension, a small Galerkin solver and a harness that
//! turns inequalities with unspecified constants into bounded-ratio checks.

pub mod covering;
pub mod extension;
pub mod fracsolve;
pub mod polytope;
pub mod quadrature;
pub mod verify;
pub mod cli;

pub use polytope::{Frame, Kind, NeighborhoodSpec, Polytope};
