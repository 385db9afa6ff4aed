//! Desk-scale numerics for the recurrent construction of spectral data of
//! H = (−Δ)^l + V in two dimensions, with V limit-periodic.
//!
//! The lattice, potential, Bloch and series modules are generic over the
//! scalar type ([`Real`], implemented for `f32` and `f64`). Geometry,
//! resonance maps and eigenfunctions run in `f64`.

// `!(a > b)` is used on purpose so that NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod bloch;
pub mod eigenfunction;
pub mod error;
pub mod isoenergetic;
pub mod lattice;
pub mod perturb;
pub mod potential;
pub mod scalar;
pub mod swisscheese;

pub use error::{Error, Result};
pub use scalar::Real;

pub type ModelParams = lattice::ModelParams<f64>;
pub type ModelParams32 = lattice::ModelParams<f32>;
pub type CellSpec = lattice::CellSpec<f64>;
pub type Quasimomentum = lattice::Quasimomentum<f64>;
pub type PotentialSpec = potential::PotentialSpec<f64>;
pub type PotentialSpec32 = potential::PotentialSpec<f32>;
pub type WindowedPotential = potential::WindowedPotential<f64>;
pub type BlochMatrix = bloch::BlochMatrix<f64>;
pub type BlochMatrix32 = bloch::BlochMatrix<f32>;
pub type SeriesEigenvalue = perturb::SeriesEigenvalue<f64>;
pub type SeriesProjection = perturb::SeriesProjection<f64>;
