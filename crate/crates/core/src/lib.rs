//! Accident-risk prediction from accident history, weather, demographics and
//! map imagery over hexagonal city regions.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod geoindex;
pub mod ingest;
pub mod model;
pub mod nn;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
