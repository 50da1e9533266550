//! Estimation of average eGFR-slope treatment effects from longitudinal
//! kidney-function data: trial-like data simulation, five slope estimators
//! behind one interface, and a Monte Carlo harness for their operating
//! characteristics.

pub mod dataset;
pub mod error;
pub mod estimators;
pub mod mcstudy;
pub mod numerics;
pub mod rng;
pub mod simgen;
pub mod trajectories;

pub use dataset::{
    Arm, ArmId, ArmSlope, EstimandSpec, LongitudinalDataset, Measurement, SlopeEstimate,
    SlopeKind, WeightKind,
};
pub use error::{Error, Result};
