//! Semiclassical tunnelling of energy-localised wave packets through a smooth
//! one-dimensional barrier (mass 1, hbar the only scale).
//!
//! The transmitted packet is built from stationary scattering states weighted
//! by an energy density `Q(E, hbar)`, approximated by saddle-point formulas
//! around the minimiser `E*` of `alpha = G + K/2`, and checked against a
//! split-step Fourier solution of the time-dependent equation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actions;
pub mod compare;
pub mod config;
pub mod density;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod packets;
pub mod potential;
pub mod quadrature;
pub mod roots;
pub mod scalar;
pub mod scattering;
pub mod tdse;

pub use density::{DensityParams, EnergyWindow, Saddle};
pub use error::{Error, Result};
pub use grid::UniformGrid;
pub use num_complex::Complex;
pub use potential::{PotentialModel, Side};
pub use scalar::Real;

pub type Potential = PotentialModel<f64>;
pub type Density = DensityParams<f64>;
pub type Window = EnergyWindow<f64>;
pub type Profile = actions::ActionProfile<f64>;

pub type Field = packets::WaveField<f64>;
pub type C64 = Complex<f64>;
