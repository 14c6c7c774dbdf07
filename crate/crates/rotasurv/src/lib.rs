//! Rotation sampling designs for finite populations of curves.
//!
//! The crate implements time-varying survey designs (fixed panels, full and
//! partial replacement, conventional rotation), the Horvitz-Thompson and
//! composite estimators of a population mean curve, closed-form covariance
//! and ISE-variance formulas with exact small-instance oracles, sample
//! allocation rules, and a seeded Monte Carlo harness with a config-driven
//! CLI on top.
//!
//! The numeric core is generic over [`scalar::Scalar`] so the same formulas
//! run in `f64` for production and in exact rational arithmetic for the
//! enumeration oracles; the aliases below fix the everyday `f64` shapes.

pub mod allocation;
pub mod analytics;
pub mod cli;
pub mod config;
pub mod designs;
pub mod error;
pub mod estimators;
pub mod exact;
pub mod harness;
pub mod population;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};

/// Exact scalar used by the rational oracle modes.
pub type Exact = num_rational::BigRational;

/// Default float instantiations.
pub type Grid = population::TimeGrid<f64>;
pub type Series = population::CurveSeries<f64>;
pub type Population = population::FunctionalPopulation<f64>;
